"""End-to-end matcher: wiring of encoders, global context, local exchange,
optimal transport, and confidence pruning for one scene pair.

Every stage degrades gracefully on small scenes (cluster counts and neighbor
counts shrink as needed) so that batch sweeps never crash on a valid scene.
Ablation switches disable the color branch, the global embedding, the
angular attention, or the cluster attention without changing any shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dataio import Scene
from .diffcore import Tape, Var, add, concat
from .encoder import encode_points, init_encoder_params
from .errors import ConfigError
from .geometry import (
    CameraIntrinsics,
    GtMatchConfig,
    MatchSet,
    Pose,
    bearing_from_pixel,
    bearing_from_point,
    camera_coords,
)
from .global_graph import (
    angular_attention,
    angular_embedding,
    attach_global,
    build_global_graph,
    cluster_points,
    gnn_update,
    init_global_params,
    pool_cluster_features,
)
from .local_matching import (
    ClusterAttentionConfig,
    ExtendedScoreMatrix,
    LocalGraphConfig,
    cluster_attention,
    cost_matrix,
    init_local_params,
    linear_cross_attention,
    local_graph_init,
    mutual_top1,
    sinkhorn_with_dustbins,
)
from .outlier_rejection import (
    RejectionConfig,
    classify_matches,
    init_rejection_params,
    pair_probabilities,
)
from .params import ParamBundle, lift
from .pose import RansacConfig


@dataclass(frozen=True)
class Ablation:
    use_color: bool = True
    use_global: bool = True
    use_angular: bool = True
    use_cluster_attn: bool = True


@dataclass(frozen=True)
class RunConfig:
    """All pipeline tunables; defaults follow the published training setup
    where one exists."""

    d: int = 128
    x_clusters: int = 10
    k_graph: int = 4
    k_local: int = 10
    coarse_groups: int = 8
    fine_groups: int = 2
    attention_rounds: int = 2
    sigma_a: float = float(np.deg2rad(15.0))
    reg: float = 0.1
    sinkhorn_iterations: int = 20
    dustbin_init: float = 1.0
    theta: float = 0.5
    lr: float = 1e-3
    max_keypoints: int = 1024
    slope: float = 0.01
    norm_eps: float = 1e-5
    gt_epsilon: float = 0.001
    gt_space: str = "normalized"
    ransac_threshold_px: float = 8.0
    ransac_iterations: int = 1000
    ransac_confidence: float = 0.999

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if self.x_clusters < 1:
            raise ConfigError(f"x_clusters must be >= 1, got {self.x_clusters}")
        if self.k_graph < 1:
            raise ConfigError(f"k_graph must be >= 1, got {self.k_graph}")
        if self.sinkhorn_iterations < 1:
            raise ConfigError("sinkhorn_iterations must be >= 1")
        if self.reg <= 0:
            raise ConfigError(f"reg must be > 0, got {self.reg}")
        if not 0 < self.theta < 1:
            raise ConfigError(f"theta must lie in (0, 1), got {self.theta}")
        if self.max_keypoints < 1:
            raise ConfigError("max_keypoints must be >= 1")
        LocalGraphConfig(k_local=self.k_local)
        ClusterAttentionConfig(self.coarse_groups, self.fine_groups, self.attention_rounds)
        RejectionConfig(self.theta)

    @property
    def gt_config(self) -> GtMatchConfig:
        return GtMatchConfig(self.gt_epsilon, self.gt_space)

    @property
    def cluster_cfg(self) -> ClusterAttentionConfig:
        return ClusterAttentionConfig(
            self.coarse_groups, self.fine_groups, self.attention_rounds
        )

    def ransac_config(self, seed: int = 0) -> RansacConfig:
        return RansacConfig(
            self.ransac_threshold_px,
            self.ransac_iterations,
            self.ransac_confidence,
            seed,
        )

    def config_echo(self) -> dict:
        return {
            "d": self.d,
            "x_clusters": self.x_clusters,
            "k_graph": self.k_graph,
            "k_local": self.k_local,
            "coarse_groups": self.coarse_groups,
            "sigma_a": self.sigma_a,
            "reg": self.reg,
            "theta": self.theta,
        }


def init_params(cfg: RunConfig, seed: int = 0) -> ParamBundle:
    """Fresh parameter bundle for every learned stage."""
    rng = np.random.default_rng(seed)
    params: ParamBundle = {}
    params.update(init_encoder_params(rng, cfg.d, cfg.slope))
    params.update(init_global_params(rng, cfg.d, cfg.slope))
    params.update(init_local_params(rng, cfg.d, cfg.cluster_cfg, cfg.slope))
    params.update(init_rejection_params(rng, cfg.d, cfg.slope))
    return params


@dataclass
class MatchResult:
    """Forward-pass artifacts for one scene pair (tape still alive)."""

    tape: Tape
    lifted: dict[str, Var]
    m_init: MatchSet
    m_final: MatchSet
    probabilities: np.ndarray  # per m_init pair
    score: ExtendedScoreMatrix | None  # None when either side is empty
    prob_var: Var | None  # differentiable probabilities, (|m_init|, 1)
    keypoints_px: np.ndarray  # the (possibly truncated) query keypoints
    point_index: np.ndarray  # pipeline row -> original scene point index
    n_points: int  # pipeline-visible 3D point count


def _global_stage(
    tape: Tape,
    lifted: dict[str, Var],
    bearings: np.ndarray,
    feats: Var,
    cfg: RunConfig,
    ablation: Ablation,
    seed: int,
) -> Var:
    n = bearings.shape[0]
    if not ablation.use_global:
        return concat([feats, np.zeros((n, cfg.d))], axis=1)
    x_eff = min(cfg.x_clusters, n)
    assignment = cluster_points(bearings, x_eff, seed)
    nodes = pool_cluster_features(feats, assignment)
    n_nodes = nodes.centers.shape[0]
    k_eff = min(cfg.k_graph, n_nodes - 1)
    if k_eff < 1:
        # a single populated cluster cannot form a graph; broadcast its
        # pooled feature as the global embedding
        return attach_global(feats, nodes.features, nodes.point_node)
    graph = build_global_graph(nodes, k_eff)
    f_g = gnn_update(graph, lifted, cfg.slope, cfg.norm_eps)
    if ablation.use_angular and k_eff >= 2:
        ang = angular_embedding(graph, cfg.sigma_a, cfg.d)
        f_gg = angular_attention(f_g, ang, lifted, graph.edges, cfg.norm_eps)
    else:
        f_gg = f_g
    return attach_global(feats, f_gg, nodes.point_node)


def match_pair(
    keypoints_px: np.ndarray,
    keypoints_rgb: np.ndarray,
    k_query: CameraIntrinsics,
    points_xyz: np.ndarray,
    points_rgb: np.ndarray,
    db_pose: Pose,
    params: ParamBundle,
    cfg: RunConfig,
    ablation: Ablation = Ablation(),
    seed: int = 0,
) -> MatchResult:
    """Full forward pass from raw keypoints/points to final matches."""
    keypoints_px = np.asarray(keypoints_px, dtype=np.float64).reshape(-1, 2)
    keypoints_rgb = np.asarray(keypoints_rgb, dtype=np.float64).reshape(-1, 3)
    points_xyz = np.asarray(points_xyz, dtype=np.float64).reshape(-1, 3)
    points_rgb = np.asarray(points_rgb, dtype=np.float64).reshape(-1, 3)
    if keypoints_px.shape[0] > cfg.max_keypoints:
        keypoints_px = keypoints_px[: cfg.max_keypoints]
        keypoints_rgb = keypoints_rgb[: cfg.max_keypoints]

    # only points in front of the database view have bearing vectors
    in_front = camera_coords(points_xyz, db_pose)[:, 2] > 0
    point_index = np.nonzero(in_front)[0]
    vis_xyz = points_xyz[point_index]
    vis_rgb = points_rgb[point_index]

    n = keypoints_px.shape[0]
    m = vis_xyz.shape[0]
    tape = Tape()
    lifted = lift(tape, params)
    if n == 0 or m == 0:
        empty = MatchSet.empty()
        return MatchResult(
            tape, lifted, empty, empty, np.empty(0), None, None,
            keypoints_px, point_index, m,
        )

    bearings_p = bearing_from_pixel(keypoints_px, k_query)
    bearings_q = bearing_from_point(vis_xyz, db_pose)

    f_p = encode_points(bearings_p, keypoints_rgb, lifted, cfg.slope, cfg.norm_eps, ablation.use_color)
    f_q = encode_points(bearings_q, vis_rgb, lifted, cfg.slope, cfg.norm_eps, ablation.use_color)

    f_p = _global_stage(tape, lifted, bearings_p, f_p, cfg, ablation, seed)
    f_q = _global_stage(tape, lifted, bearings_q, f_q, cfg, ablation, seed + 1)

    local_cfg = LocalGraphConfig(k_local=cfg.k_local)
    if n > cfg.k_local:
        f_p = local_graph_init(bearings_p, f_p, local_cfg, lifted, cfg.slope, cfg.norm_eps)
    if m > cfg.k_local:
        f_q = local_graph_init(bearings_q, f_q, local_cfg, lifted, cfg.slope, cfg.norm_eps)

    cross_p, cross_q = linear_cross_attention(f_p, f_q, lifted)
    f_p = add(f_p, cross_p)
    f_q = add(f_q, cross_q)

    if ablation.use_cluster_attn and n + m >= cfg.coarse_groups:
        f_p, f_q = cluster_attention(
            concat([f_p, f_q], axis=0), n, cfg.cluster_cfg, lifted, seed + 2, cfg.norm_eps
        )

    cost = cost_matrix(f_p, f_q)
    score = sinkhorn_with_dustbins(
        cost, cfg.sinkhorn_iterations, cfg.reg, lifted["ot.dustbin"]
    )
    m_init = mutual_top1(score.scores.values)
    if len(m_init):
        prob_var = pair_probabilities(m_init, f_p, f_q, lifted, cfg.slope)
        m_final, probs = classify_matches(
            m_init, f_p, f_q, lifted, RejectionConfig(cfg.theta), cfg.slope
        )
    else:
        prob_var = None
        m_final, probs = MatchSet.empty(), np.empty(0)
    return MatchResult(
        tape, lifted, m_init, m_final, probs, score, prob_var,
        keypoints_px, point_index, m,
    )


def match_scene(
    scene: Scene,
    params: ParamBundle,
    cfg: RunConfig,
    ablation: Ablation = Ablation(),
    seed: int = 0,
) -> MatchResult:
    """Match camera 0's keypoints against the scene point cloud."""
    return match_pair(
        scene.keypoints_xy[0],
        scene.keypoints_rgb[0],
        scene.query_camera.intrinsics,
        scene.points_xyz,
        scene.points_rgb,
        scene.db_camera.pose,
        params,
        cfg,
        ablation,
        seed,
    )


def matches_in_scene_indices(result: MatchResult, matches: MatchSet) -> MatchSet:
    """Map pipeline-row point indices back to original scene point indices."""
    if len(matches) == 0:
        return matches
    pairs = matches.pairs.copy()
    pairs[:, 1] = result.point_index[pairs[:, 1]]
    return MatchSet(pairs, matches.confidence.copy())


def ablation_from_flags(no_color=False, no_global=False, no_angular=False, no_cluster_attn=False) -> Ablation:
    return Ablation(
        use_color=not no_color,
        use_global=not no_global,
        use_angular=not no_angular,
        use_cluster_attn=not no_cluster_attn,
    )
