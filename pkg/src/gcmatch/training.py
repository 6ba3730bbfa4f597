"""Losses, label construction, Adam, and the desk-scale training loop.

The matching loss is the negative log-likelihood of the transport plan at
the supervised entries (ground-truth pairs plus the dustbin entries of the
unmatched points); the rejection loss is class-balanced binary cross-entropy
over the initial matches.  Training runs one synthetic scene pair per step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import Scene
from .diffcore import Var, add, backward, clip, gather_elements, grad_or_zero, log, mean, mul, sum_
from .errors import ConfigError, ContractError, DegenerateBatchError, TrainingError
from .geometry import CameraIntrinsics, GtMatchConfig, MatchSet, Pose, ground_truth_matches
from .local_matching import ExtendedScoreMatrix
from .params import ParamBundle
from .pipeline import Ablation, MatchResult, RunConfig, init_params, match_scene
from .synth import SynthConfig, synth_scene_pair

PROB_FLOOR = 1e-7


@dataclass
class TrainingLabels:
    m_gt: MatchSet  # one-to-one ground truth
    unmatched_p: np.ndarray  # keypoint indices with no GT partner
    unmatched_q: np.ndarray  # point indices with no GT partner
    y: np.ndarray  # per m_init pair: 1.0 iff the pair is in m_gt
    w: np.ndarray  # per m_init pair: class-balancing weight, mean 1


@dataclass
class LossBreakdown:
    l_ot: float
    l_or: float

    @property
    def total(self) -> float:
        return self.l_ot + self.l_or


def reduce_one_to_one(gt: MatchSet) -> MatchSet:
    """Greedy nearest-residual reduction of a possibly many-to-many GT set."""
    if len(gt) == 0:
        return gt
    order = np.argsort(gt.confidence, kind="stable")
    used_n, used_m = set(), set()
    keep = []
    for idx in order:
        n, m = int(gt.pairs[idx, 0]), int(gt.pairs[idx, 1])
        if n in used_n or m in used_m:
            continue
        used_n.add(n)
        used_m.add(m)
        keep.append(idx)
    keep = np.array(sorted(keep), dtype=np.int64)
    return MatchSet(gt.pairs[keep], gt.confidence[keep])


def build_labels(
    m_init: MatchSet,
    keypoints_px: np.ndarray,
    points_xyz: np.ndarray,
    query_pose: Pose,
    k: CameraIntrinsics,
    cfg: GtMatchConfig,
) -> TrainingLabels:
    """Ground-truth supervision for one scene pair.

    The raw reprojection matches are reduced to one-to-one by nearest
    residual; unmatched remainders fill the dustbin index sets, and each
    initial match gets a binary label with an inverse-class-frequency weight
    normalized to mean 1.
    """
    n = np.asarray(keypoints_px).reshape(-1, 2).shape[0]
    m = np.asarray(points_xyz).reshape(-1, 3).shape[0]
    gt = reduce_one_to_one(ground_truth_matches(keypoints_px, points_xyz, query_pose, k, cfg))
    matched_n = set(int(a) for a in gt.pairs[:, 0])
    matched_m = set(int(b) for b in gt.pairs[:, 1])
    unmatched_p = np.array(sorted(set(range(n)) - matched_n), dtype=np.int64)
    unmatched_q = np.array(sorted(set(range(m)) - matched_m), dtype=np.int64)

    gt_set = {(int(a), int(b)) for a, b in gt.pairs}
    y = np.array(
        [1.0 if (int(a), int(b)) in gt_set else 0.0 for a, b in m_init.pairs]
    )
    w = np.ones_like(y)
    n_pos = float(y.sum())
    n_neg = float(len(y) - n_pos)
    if n_pos > 0 and n_neg > 0:
        w = np.where(y == 1.0, len(y) / (2.0 * n_pos), len(y) / (2.0 * n_neg))
    return TrainingLabels(gt, unmatched_p, unmatched_q, y, w)


def matching_loss(score: ExtendedScoreMatrix, labels: TrainingLabels) -> Var:
    """Negative log-likelihood of the transport plan at supervised entries."""
    full = score.full
    n_plus_1, m_plus_1 = full.shape
    n, m = n_plus_1 - 1, m_plus_1 - 1
    rows = np.concatenate(
        [labels.m_gt.pairs[:, 0], labels.unmatched_p, np.full(len(labels.unmatched_q), n)]
    )
    cols = np.concatenate(
        [labels.m_gt.pairs[:, 1], np.full(len(labels.unmatched_p), m), labels.unmatched_q]
    )
    total = rows.size
    if total == 0:
        raise DegenerateBatchError("no ground-truth or unmatched entries to supervise")
    vals = clip(gather_elements(full, rows, cols), PROB_FLOOR, 1.0)
    return mul(sum_(log(vals)), -1.0 / total)


def rejection_loss(probabilities: Var, labels: TrainingLabels) -> Var:
    """Class-weighted binary cross-entropy over the initial matches."""
    n_pairs = labels.y.size
    if n_pairs == 0:
        return probabilities.tape.leaf(0.0) if probabilities is not None else None
    p = clip(probabilities, PROB_FLOOR, 1.0 - PROB_FLOOR)
    y = labels.y.reshape(-1, 1)
    w = labels.w.reshape(-1, 1)
    terms = mul(w, add(mul(y, log(p)), mul(1.0 - y, log(add(mul(p, -1.0), 1.0)))))
    return mul(sum_(terms), -1.0 / n_pairs)


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: ParamBundle,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Standard Adam update, in place on the bundle."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ContractError(
                f"gradient shape {g.shape} does not match parameter {name} {p.shape}"
            )
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)


def scene_loss(
    result: MatchResult, scene: Scene, cfg: RunConfig
) -> tuple[Var | None, TrainingLabels | None, LossBreakdown]:
    """Total differentiable loss for one forward result."""
    if result.score is None:
        return None, None, LossBreakdown(0.0, 0.0)
    kp = result.keypoints_px
    pts = scene.points_xyz[result.point_index]
    labels = build_labels(
        result.m_init, kp, pts, scene.query_camera.pose,
        scene.query_camera.intrinsics, cfg.gt_config,
    )
    l_ot = matching_loss(result.score, labels)
    if result.prob_var is not None and labels.y.size:
        l_or = rejection_loss(result.prob_var, labels)
        total = add(l_ot, l_or)
        l_or_val = float(l_or.values)
    else:
        total = l_ot
        l_or_val = 0.0
    return total, labels, LossBreakdown(float(l_ot.values), l_or_val)


@dataclass
class TrainResult:
    params: ParamBundle
    curve: list[LossBreakdown]  # per-epoch means
    state: AdamState


def train(
    scenes: list[Scene],
    cfg: RunConfig,
    epochs: int = 30,
    seed: int = 0,
    ablation: Ablation = Ablation(),
    params: ParamBundle | None = None,
    log_fn=None,
) -> TrainResult:
    """Desk-scale loop: one scene pair per Adam step, per-epoch mean losses."""
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    if not scenes:
        raise ConfigError("training needs at least one scene")
    if params is None:
        params = init_params(cfg, seed)
    state = AdamState()
    curve: list[LossBreakdown] = []
    for epoch in range(epochs):
        ot_sum, or_sum, count = 0.0, 0.0, 0
        for si, scene in enumerate(scenes):
            result = match_scene(scene, params, cfg, ablation, seed=seed + 7919 * si)
            total, _, breakdown = scene_loss(result, scene, cfg)
            if total is None:
                continue
            if not np.isfinite(total.values):
                raise TrainingError(f"non-finite loss at epoch {epoch}, scene {si}")
            grads_by_id = backward(result.tape, total)
            grads = {
                name: grad_or_zero(grads_by_id, var)
                for name, var in result.lifted.items()
            }
            adam_step(params, grads, state, cfg.lr)
            ot_sum += breakdown.l_ot
            or_sum += breakdown.l_or
            count += 1
        epoch_loss = LossBreakdown(ot_sum / max(count, 1), or_sum / max(count, 1))
        curve.append(epoch_loss)
        if log_fn is not None:
            log_fn(epoch, epoch_loss)
    return TrainResult(params, curve, state)


def make_training_scenes(
    base: SynthConfig, n_scenes: int, seed: int = 0
) -> list[Scene]:
    """Seeded family of scene pairs sharing one synthesis configuration."""
    from dataclasses import replace

    return [
        synth_scene_pair(replace(base, seed=seed + 1000 + i)) for i in range(n_scenes)
    ]
