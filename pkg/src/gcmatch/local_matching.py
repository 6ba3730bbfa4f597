"""Local feature exchange and differentiable matching.

The stage takes the global-augmented point features of both sides, refines
them with a per-point k-NN graph, a linear cross-attention pass, and
cluster-constrained self-attention over the concatenated sides, then scores
all pairs by feature distance and solves an entropically regularized optimal
transport with dustbins.  Initial matches are the mutual top-1 pairs of the
resulting score matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as kernels
from .diffcore import (
    Tape,
    Var,
    add,
    clip,
    concat,
    div,
    elu,
    exp,
    gather_rows,
    leaky_relu,
    linear,
    logsumexp,
    matmul,
    max_,
    mean,
    mul,
    neg,
    normalize,
    reshape,
    row_softmax,
    sqrt,
    sub,
    sum_,
    transpose,
)
from .errors import ConfigError, NumericError
from .geometry import MatchSet
from .global_graph import GNN_ROUNDS, edge_conv_rounds, kmeans
from .params import ParamBundle, kaiming


@dataclass(frozen=True)
class LocalGraphConfig:
    k_local: int = 10
    rounds: int = GNN_ROUNDS

    def __post_init__(self):
        if self.k_local < 1:
            raise ConfigError(f"k_local must be >= 1, got {self.k_local}")


@dataclass(frozen=True)
class ClusterAttentionConfig:
    coarse_groups: int = 8
    fine_groups: int = 2
    rounds: int = 2

    def __post_init__(self):
        if self.coarse_groups < 1 or self.fine_groups < 1:
            raise ConfigError("group counts must be >= 1")


def init_local_params(rng: np.random.Generator, d: int, cluster_cfg: ClusterAttentionConfig,
                      slope: float = 0.01) -> ParamBundle:
    """Weights for the local stage; feature width is 2d throughout."""
    w = 2 * d
    params: ParamBundle = {}
    for r in range(GNN_ROUNDS):
        params[f"local.init.round{r}.w"] = kaiming(rng, 2 * w, w, slope)
        params[f"local.init.round{r}.b"] = np.zeros(w)
    params["local.init.fuse.w"] = kaiming(rng, (GNN_ROUNDS + 1) * w, w, slope)
    params["local.init.fuse.b"] = np.zeros(w)
    for name in ("wq", "wk", "wv"):
        params[f"cross.{name}"] = kaiming(rng, w, w, slope)
    for r in range(cluster_cfg.rounds):
        for level in ("coarse", "fine"):
            pre = f"cluster.round{r}.{level}"
            for name in ("wq", "wk", "wv"):
                params[f"{pre}.{name}"] = kaiming(rng, w, w, slope)
            params[f"{pre}.ln.gain"] = np.ones(w)
            params[f"{pre}.ln.bias"] = np.zeros(w)
    params["ot.dustbin"] = np.array(1.0)
    return params


def local_graph_init(
    bearings: np.ndarray,
    features: Var,
    cfg: LocalGraphConfig,
    params: dict[str, Var],
    slope: float = 0.01,
    eps: float = 1e-5,
) -> Var:
    """Per-point k-NN graph update (distance terms only, no angular cues)."""
    bearings = np.asarray(bearings, dtype=np.float64).reshape(-1, 2)
    n = bearings.shape[0]
    if n <= cfg.k_local:
        raise ConfigError(f"local graph needs more than k_local={cfg.k_local} points, got {n}")
    edges = kernels.knn_indices(bearings, cfg.k_local)
    weights = [
        (params[f"local.init.round{r}.w"], params[f"local.init.round{r}.b"])
        for r in range(cfg.rounds)
    ]
    fuse = (params["local.init.fuse.w"], params["local.init.fuse.b"])
    return edge_conv_rounds(features, edges, weights, fuse, slope, eps)


def _feature_map(x: Var) -> Var:
    # elu(x) + 1 keeps the kernel strictly positive
    return add(elu(x), 1.0)


def linear_cross_attention(
    f_p: Var, f_q: Var, params: dict[str, Var]
) -> tuple[Var, Var]:
    """Each side attends to the other via the kernel factorization.

    The kernel feature map phi(x) = elu(x) + 1 lets attention weights
    phi(q)^T phi(k) / sum_k phi(q)^T phi(k) be evaluated without forming the
    quadratic weight matrix: queries contract against phi(K)^T V instead.
    """
    if f_p.shape[1] != f_q.shape[1]:
        raise ConfigError(
            f"feature widths differ: {f_p.shape[1]} vs {f_q.shape[1]}"
        )

    def attend(queries: Var, keys: Var, values: Var) -> Var:
        q = _feature_map(queries)
        k = _feature_map(keys)
        kv = matmul(transpose(k), values)  # (w, w)
        out = matmul(q, kv)  # (n, w)
        z = matmul(q, reshape(sum_(k, axis=0), (k.shape[1], 1)))  # (n, 1)
        return div(out, z)

    wq, wk, wv = params["cross.wq"], params["cross.wk"], params["cross.wv"]
    out_p = attend(linear(f_p, wq), linear(f_q, wk), linear(f_q, wv))
    out_q = attend(linear(f_q, wq), linear(f_p, wk), linear(f_p, wv))
    return out_p, out_q


def attend_within_groups(
    features: Var,
    group_labels: np.ndarray,
    params: dict[str, Var],
    prefix: str,
    eps: float = 1e-5,
) -> Var:
    """Softmax self-attention restricted to rows sharing a group label,
    followed by a residual add and layer normalization.

    Rows in different groups never exchange information.
    """
    n, w = features.shape
    q = linear(features, params[f"{prefix}.wq"])
    k = linear(features, params[f"{prefix}.wk"])
    v = linear(features, params[f"{prefix}.wv"])
    order = np.argsort(group_labels, kind="stable")
    inverse = np.empty(n, dtype=np.int64)
    inverse[order] = np.arange(n)
    pieces = []
    start = 0
    sorted_labels = group_labels[order]
    while start < n:
        end = start
        while end < n and sorted_labels[end] == sorted_labels[start]:
            end += 1
        idx = order[start:end]
        qg, kg, vg = gather_rows(q, idx), gather_rows(k, idx), gather_rows(v, idx)
        scores = mul(matmul(qg, transpose(kg)), 1.0 / np.sqrt(w))
        pieces.append(matmul(row_softmax(scores), vg))
        start = end
    attended = gather_rows(concat(pieces, axis=0), inverse)
    return normalize(
        add(features, attended),
        "layer",
        eps,
        gain=params[f"{prefix}.ln.gain"],
        bias=params[f"{prefix}.ln.bias"],
    )


def _split_groups(features_np: np.ndarray, coarse: int, fine: int, seed: int):
    """Two-level seeded k-means grouping of feature rows.

    Returns (coarse_labels, fine_labels) where fine labels are globally
    unique across coarse groups.
    """
    n = features_np.shape[0]
    coarse_eff = min(coarse, n)
    coarse_labels, _ = kmeans(features_np, coarse_eff, seed)
    fine_labels = np.zeros(n, dtype=np.int64)
    next_label = 0
    for g in range(coarse_eff):
        members = np.nonzero(coarse_labels == g)[0]
        if members.size == 0:
            continue
        fine_eff = min(fine, members.size)
        sub, _ = kmeans(features_np[members], fine_eff, seed + 1 + g)
        fine_labels[members] = next_label + sub
        next_label += fine_eff
    return coarse_labels, fine_labels


def cluster_attention(
    f_all: Var,
    n_first: int,
    cfg: ClusterAttentionConfig,
    params: dict[str, Var],
    seed: int,
    eps: float = 1e-5,
) -> tuple[Var, Var]:
    """Two-level cluster-constrained self-attention over both sides.

    The concatenated rows are clustered into coarse groups and each coarse
    group is subdivided; attention runs within coarse groups, then within
    fine groups, repeated ``cfg.rounds`` times.  Rows come back in their
    original order, split at ``n_first``.
    """
    n_total = f_all.shape[0]
    if n_total < cfg.coarse_groups:
        raise ConfigError(
            f"{n_total} rows cannot form {cfg.coarse_groups} coarse groups"
        )
    current = f_all
    for r in range(cfg.rounds):
        coarse_labels, fine_labels = _split_groups(
            current.values, cfg.coarse_groups, cfg.fine_groups, seed + 1000 * r
        )
        current = attend_within_groups(
            current, coarse_labels, params, f"cluster.round{r}.coarse", eps
        )
        current = attend_within_groups(
            current, fine_labels, params, f"cluster.round{r}.fine", eps
        )
    idx_p = np.arange(n_first)
    idx_q = np.arange(n_first, n_total)
    return gather_rows(current, idx_p), gather_rows(current, idx_q)


def cost_matrix(f_p: Var, f_q: Var) -> Var:
    """Pairwise L2 distances between feature rows."""
    if f_p.shape[1] != f_q.shape[1]:
        raise ConfigError(f"feature widths differ: {f_p.shape[1]} vs {f_q.shape[1]}")
    p2 = sum_(mul(f_p, f_p), axis=1, keepdims=True)  # (n, 1)
    q2 = reshape(sum_(mul(f_q, f_q), axis=1), (1, f_q.shape[0]))  # (1, m)
    cross = matmul(f_p, transpose(f_q))
    d2 = sub(add(p2, q2), mul(cross, 2.0))
    return sqrt(clip(d2, 0.0, np.inf))


@dataclass
class ExtendedScoreMatrix:
    """Sinkhorn output: the (N+1)x(M+1) plan with dustbins, on the tape."""

    full: Var  # (n+1, m+1)
    scores: Var  # (n, m) dustbins dropped

    @property
    def values(self) -> np.ndarray:
        return self.full.values


def sinkhorn_with_dustbins(
    cost: Var,
    iterations: int = 20,
    reg: float = 0.1,
    dustbin: Var | float = 1.0,
) -> ExtendedScoreMatrix:
    """Log-domain Sinkhorn on the dustbin-extended cost matrix.

    The cost is extended by one row and column at the dustbin score and
    converted to log-affinities -cost/reg.  Alternating row/column
    normalizations run against the augmented marginals (each real row and
    column has mass 1; the dustbin row absorbs M, the dustbin column N).
    Differentiable through all iterations.
    """
    if iterations < 1:
        raise ConfigError(f"iterations must be >= 1, got {iterations}")
    if reg <= 0:
        raise ConfigError(f"reg must be > 0, got {reg}")
    n, m = cost.shape
    tape = cost.tape
    if not isinstance(dustbin, Var):
        dustbin = tape.leaf(float(dustbin))
    # extend with a dustbin row and column sharing the scalar score
    bin_scalar = reshape(dustbin, (1, 1))
    ext = concat([cost, mul(np.ones((n, 1)), bin_scalar)], axis=1)  # (n, m+1)
    ext = concat([ext, mul(np.ones((1, m + 1)), bin_scalar)], axis=0)  # (n+1, m+1)
    z = mul(ext, -1.0 / reg)

    log_mu = np.concatenate([np.zeros(n), [np.log(m)]]).reshape(n + 1, 1)
    log_nu = np.concatenate([np.zeros(m), [np.log(n)]]).reshape(1, m + 1)
    u = tape.leaf(np.zeros((n + 1, 1)))
    v = tape.leaf(np.zeros((1, m + 1)))
    for it in range(iterations):
        u = sub(log_mu, logsumexp(add(z, v), axis=1, keepdims=True))
        v = sub(log_nu, logsumexp(add(z, u), axis=0, keepdims=True))
        if not (np.isfinite(u.values).all() and np.isfinite(v.values).all()):
            raise NumericError(f"sinkhorn produced non-finite values at iteration {it}")
    full = exp(add(add(z, u), v))
    real_rows = gather_rows(full, np.arange(n))  # (n, m+1)
    scores = transpose(gather_rows(transpose(real_rows), np.arange(m)))
    return ExtendedScoreMatrix(full, scores)


def mutual_top1(scores: np.ndarray) -> MatchSet:
    """Pairs where each index is the other's argmax; ties to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if not np.isfinite(scores).all():
        raise NumericError("mutual_top1 requires finite scores")
    if scores.size == 0:
        return MatchSet.empty()
    pairs = kernels.mutual_top1_pairs(scores)
    conf = scores[pairs[:, 0], pairs[:, 1]] if len(pairs) else np.empty(0)
    return MatchSet(pairs, conf)
