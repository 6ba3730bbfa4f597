"""Cluster-level geometric context: clustering, k-NN graph, distance GNN,
angular-aware attention, and attachment of global embeddings to point rows.

Bearing vectors are clustered; each cluster contributes one graph node whose
feature is the mean of its member point features.  Node features are updated
by two rounds of max-over-neighbors edge convolutions, fused across rounds,
then refined by attention whose scores mix feature affinity with a
rotation-invariant triplet-angle embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as kernels
from .diffcore import (
    Var,
    add,
    concat,
    gather_rows,
    leaky_relu,
    linear,
    matmul,
    max_,
    mul,
    normalize,
    reshape,
    row_softmax,
    sub,
    sum_,
)
from .errors import ConfigError
from .params import ParamBundle, kaiming

GNN_ROUNDS = 2


@dataclass
class ClusterAssignment:
    labels: np.ndarray  # (N,) cluster index in [0, X)
    centers: np.ndarray  # (X, 2)


@dataclass
class GlobalNodes:
    """Nonempty-cluster nodes: centers, pooled features, per-point node index."""

    centers: np.ndarray  # (X_eff, 2)
    features: Var  # (X_eff, d)
    point_node: np.ndarray  # (N,) node index of each point's cluster


@dataclass
class GlobalGraph:
    nodes: GlobalNodes
    edges: np.ndarray  # (X_eff, k) neighbor node indices


@dataclass
class AngularEmbedding:
    """Sinusoidally embedded triplet angles, one (k, k, d) block per node."""

    embedded: np.ndarray  # (X, k, k, d)
    sigma_a: float


def kmeans(points: np.ndarray, n_clusters: int, seed: int, max_iter: int = 50):
    """Seeded k-means++ then Lloyd iterations capped at ``max_iter``.

    Returns (labels, centers).  Empty clusters keep their previous center.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= n_clusters <= n:
        raise ConfigError(f"need 1 <= clusters <= {n} points, got {n_clusters}")
    rng = np.random.default_rng(seed)
    centers = np.empty((n_clusters, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = kernels.pairwise_sqdist(points, centers[:1]).ravel()
    for j in range(1, n_clusters):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = points[idx]
        d2 = np.minimum(d2, kernels.pairwise_sqdist(points, centers[j : j + 1]).ravel())
    labels = kernels.assign_labels(points, centers)
    for _ in range(max_iter):
        for j in range(n_clusters):
            members = labels == j
            if members.any():
                centers[j] = points[members].mean(axis=0)
        new_labels = kernels.assign_labels(points, centers)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centers


def cluster_points(bearings: np.ndarray, x_groups: int, seed: int) -> ClusterAssignment:
    bearings = np.asarray(bearings, dtype=np.float64).reshape(-1, 2)
    if bearings.shape[0] < x_groups:
        raise ConfigError(
            f"cannot form {x_groups} clusters from {bearings.shape[0]} points"
        )
    labels, centers = kmeans(bearings, x_groups, seed)
    return ClusterAssignment(labels, centers)


def pool_cluster_features(features: Var, assignment: ClusterAssignment) -> GlobalNodes:
    """Per-cluster mean feature; empty clusters are dropped and indices remapped."""
    labels = assignment.labels
    n = labels.shape[0]
    x = assignment.centers.shape[0]
    counts = np.bincount(labels, minlength=x)
    nonempty = np.nonzero(counts > 0)[0]
    remap = np.full(x, -1, dtype=np.int64)
    remap[nonempty] = np.arange(nonempty.shape[0])
    pool = np.zeros((nonempty.shape[0], n))
    pool[remap[labels], np.arange(n)] = 1.0 / counts[labels]
    pooled = matmul(pool, features)
    return GlobalNodes(assignment.centers[nonempty].copy(), pooled, remap[labels])


def build_global_graph(nodes: GlobalNodes, k: int) -> GlobalGraph:
    """Connect each node to its k nearest neighbors (ties to the lower index)."""
    x = nodes.centers.shape[0]
    if x <= k:
        raise ConfigError(f"k-NN graph needs more than k={k} nodes, got {x}")
    edges = kernels.knn_indices(nodes.centers, k)
    return GlobalGraph(nodes, edges)


def init_global_params(rng: np.random.Generator, d: int, slope: float = 0.01) -> ParamBundle:
    params: ParamBundle = {}
    for r in range(GNN_ROUNDS):
        params[f"global.gnn.round{r}.w"] = kaiming(rng, 2 * d, d, slope)
        params[f"global.gnn.round{r}.b"] = np.zeros(d)
    params["global.gnn.fuse.w"] = kaiming(rng, (GNN_ROUNDS + 1) * d, d, slope)
    params["global.gnn.fuse.b"] = np.zeros(d)
    for name in ("wa", "wq", "wk", "wv"):
        params[f"global.attn.{name}"] = kaiming(rng, d, d, slope)
    params["global.attn.ln.gain"] = np.ones(d)
    params["global.attn.ln.bias"] = np.zeros(d)
    return params


def edge_conv_rounds(
    features: Var,
    edges: np.ndarray,
    weights: list[tuple[Var, Var]],
    fuse: tuple[Var, Var],
    slope: float = 0.01,
    eps: float = 1e-5,
) -> Var:
    """Shared distance-GNN body: per-round max-over-neighbors edge updates on
    concat(f_x, f_x - f_y), then a fusion layer over all round outputs."""
    x, k = edges.shape
    width = features.shape[1]
    src = np.repeat(np.arange(x), k)
    stages = [features]
    current = features
    for w, b in weights:
        fx = gather_rows(current, src)
        fy = gather_rows(current, edges.ravel())
        edge_in = concat([fx, sub(fx, fy)], axis=1)
        h = leaky_relu(normalize(linear(edge_in, w, b), "instance", eps), slope)
        current = max_(reshape(h, (x, k, h.shape[1])), axis=1)
        stages.append(current)
    fused_in = concat(stages, axis=1)
    return leaky_relu(normalize(linear(fused_in, fuse[0], fuse[1]), "instance", eps), slope)


def gnn_update(graph: GlobalGraph, params: dict[str, Var], slope: float = 0.01, eps: float = 1e-5) -> Var:
    weights = [
        (params[f"global.gnn.round{r}.w"], params[f"global.gnn.round{r}.b"])
        for r in range(GNN_ROUNDS)
    ]
    fuse = (params["global.gnn.fuse.w"], params["global.gnn.fuse.b"])
    return edge_conv_rounds(graph.nodes.features, graph.edges, weights, fuse, slope, eps)


def sinusoidal_embedding(values: np.ndarray, dim: int) -> np.ndarray:
    """Interleaved sine/cosine frequency encoding of scalars, widened to ``dim``."""
    idx = np.arange(dim)
    freqs = np.power(10000.0, -(2.0 * (idx // 2)) / dim)
    phased = values[..., None] * freqs
    out = np.empty(phased.shape)
    out[..., 0::2] = np.sin(phased[..., 0::2])
    out[..., 1::2] = np.cos(phased[..., 1::2])
    return out


def angular_embedding(graph: GlobalGraph, sigma_a: float, dim: int) -> AngularEmbedding:
    """Triplet angles at each node, scaled by sigma_a and sinusoidally embedded.

    Angles between neighbor-difference vectors are invariant to in-plane
    rotation and translation of the centers.  Coincident centers give angle 0.
    """
    if graph.edges.shape[1] < 2:
        raise ConfigError("angular embedding needs at least 2 neighbors per node")
    if sigma_a <= 0:
        raise ConfigError(f"sigma_a must be > 0, got {sigma_a}")
    angles = kernels.triplet_angles(graph.nodes.centers, graph.edges)
    return AngularEmbedding(sinusoidal_embedding(angles / sigma_a, dim), sigma_a)


def angular_attention(
    f_g: Var,
    ang: AngularEmbedding,
    params: dict[str, Var],
    edges: np.ndarray,
    eps: float = 1e-5,
) -> Var:
    """Neighbor attention with a triplet-angle score bias, residual + LayerNorm.

    The embedded angles are projected, reduced over the third point by max,
    and dotted with each node's query; adding the feature affinity and scaling
    by sqrt(d) gives the scores, softmax-normalized over each node's
    neighbors.
    """
    x, k = edges.shape
    d = f_g.shape[1]
    q = linear(f_g, params["global.attn.wq"])
    key = linear(f_g, params["global.attn.wk"])
    val = linear(f_g, params["global.attn.wv"])
    kg = reshape(gather_rows(key, edges.ravel()), (x, k, d))
    vg = reshape(gather_rows(val, edges.ravel()), (x, k, d))
    aproj = matmul(ang.embedded.reshape(-1, d), params["global.attn.wa"])
    aproj = max_(reshape(aproj, (x, k, k, d)), axis=2)  # reduce over the third point
    q3 = reshape(q, (x, 1, d))
    scores = add(sum_(mul(aproj, q3), axis=2), sum_(mul(kg, q3), axis=2))
    weights = row_softmax(mul(scores, 1.0 / np.sqrt(d)))
    attended = sum_(mul(reshape(weights, (x, k, 1)), vg), axis=1)
    return normalize(
        add(f_g, attended),
        "layer",
        eps,
        gain=params["global.attn.ln.gain"],
        bias=params["global.attn.ln.bias"],
    )


def attach_global(local: Var, fgg: Var, point_node: np.ndarray) -> Var:
    """Concatenate each point's feature with its cluster's global embedding."""
    return concat([local, gather_rows(fgg, point_node)], axis=1)
