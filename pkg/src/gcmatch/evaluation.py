"""Matching and localization metrics.

Reprojection errors compare where each matched 3D point lands under the
ground-truth and the estimated pose; their cumulative curve yields the AUC
numbers.  Pose errors are summarized by quantiles, and precision measures how
many final matches survive as RANSAC inliers.  Failed localizations
contribute +inf errors rather than being dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .geometry import CameraIntrinsics, GtMatchConfig, MatchSet, Pose, camera_coords, ground_truth_matches
from .pose import PoseEstimate, RansacConfig, pose_error, ransac_pnp, refine_lm

AUC_THRESHOLDS_PX = (1.0, 5.0, 10.0)
QUANTILE_LEVELS = (25.0, 50.0, 75.0)


@dataclass
class EvalReport:
    auc_px: dict[float, float]  # threshold -> percent
    rotation_q: dict[float, float]  # percentile -> degrees
    translation_q: dict[float, float]  # percentile -> scene units
    precision: float  # percent
    reproj_errors_px: np.ndarray = field(default_factory=lambda: np.empty(0))
    n_queries: int = 0
    n_failed: int = 0


def reprojection_errors(
    m_final: MatchSet,
    est: Pose,
    gt: Pose,
    k: CameraIntrinsics,
    points_xyz: np.ndarray,
) -> tuple[np.ndarray, int]:
    """Per-match distance between ground-truth and estimated projections.

    Matched points behind either camera are skipped; the skip count is
    returned alongside the errors.
    """
    if len(m_final) == 0:
        return np.empty(0), 0
    pts = np.asarray(points_xyz, dtype=np.float64)[m_final.pairs[:, 1]]
    cam_gt = camera_coords(pts, gt)
    cam_est = camera_coords(pts, est)
    ok = (cam_gt[:, 2] > 0) & (cam_est[:, 2] > 0)
    skipped = int((~ok).sum())
    if not ok.any():
        return np.empty(0), skipped

    def to_px(cam):
        return np.stack(
            [k.fx * cam[:, 0] / cam[:, 2] + k.cx, k.fy * cam[:, 1] / cam[:, 2] + k.cy],
            axis=1,
        )

    diff = to_px(cam_gt[ok]) - to_px(cam_est[ok])
    return np.linalg.norm(diff, axis=1), skipped


def reprojection_auc(
    errors: np.ndarray, thresholds=AUC_THRESHOLDS_PX
) -> dict[float, float]:
    """Normalized area under the cumulative error curve, in percent.

    The standard pose-AUC construction: sort the errors, form the recall
    step points, and integrate up to each threshold.  +inf entries count as
    mass that never enters the curve.
    """
    errors = np.asarray(errors, dtype=np.float64)
    out = {}
    if errors.size == 0:
        return {float(t): 0.0 for t in thresholds}
    order = np.sort(errors)
    recall = (np.arange(order.size) + 1.0) / order.size
    grid = np.concatenate([[0.0], order])
    recall = np.concatenate([[0.0], recall])
    for t in thresholds:
        last = int(np.searchsorted(grid, t))
        xs = np.concatenate([grid[:last], [t]])
        ys = np.concatenate([recall[:last], [recall[max(last - 1, 0)]]])
        out[float(t)] = float(np.trapezoid(ys, x=xs) / t * 100.0)
    return out


def quantiles(values, percentiles=QUANTILE_LEVELS) -> dict[float, float]:
    """Linear-interpolation quantiles of a nonempty list."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise InputError("quantiles of an empty list are undefined")
    finite = np.isfinite(values)
    out = {}
    for p in percentiles:
        if finite.all():
            out[float(p)] = float(np.percentile(values, p))
        else:
            # +inf entries participate by order; interpolation against inf
            # yields inf, matching the sort-and-index view
            sorted_v = np.sort(values)
            pos = (p / 100.0) * (values.size - 1)
            lo, hi = int(np.floor(pos)), int(np.ceil(pos))
            frac = pos - lo
            lo_v, hi_v = sorted_v[lo], sorted_v[hi]
            out[float(p)] = float(lo_v if frac == 0 else lo_v * (1 - frac) + hi_v * frac)
    return out


def precision(m_final: MatchSet, ransac_inliers: np.ndarray) -> float:
    """Percent of final matches that are RANSAC inliers; 0 when empty."""
    if len(m_final) == 0:
        return 0.0
    inliers = np.asarray(ransac_inliers)
    if inliers.size and (inliers.max() >= len(m_final) or inliers.min() < 0):
        raise InputError("inlier indices must index the final match set")
    return 100.0 * inliers.size / len(m_final)


@dataclass
class QueryResult:
    """One localization attempt, reduced to what the metrics need."""

    reproj_errors_px: np.ndarray
    rotation_err_deg: float
    translation_err: float
    n_final: int
    n_inliers: int
    failed: bool = False

    @staticmethod
    def failure() -> "QueryResult":
        return QueryResult(np.array([np.inf]), np.inf, np.inf, 0, 0, failed=True)


def build_report(results: list[QueryResult]) -> EvalReport:
    """Pool per-query results into one report."""
    if not results:
        return EvalReport({float(t): 0.0 for t in AUC_THRESHOLDS_PX}, {}, {}, 0.0)
    errors = np.concatenate([r.reproj_errors_px for r in results]) if results else np.empty(0)
    rot = [r.rotation_err_deg for r in results]
    trans = [r.translation_err for r in results]
    n_final = sum(r.n_final for r in results)
    n_inliers = sum(r.n_inliers for r in results)
    return EvalReport(
        auc_px=reprojection_auc(errors),
        rotation_q=quantiles(rot),
        translation_q=quantiles(trans),
        precision=100.0 * n_inliers / n_final if n_final else 0.0,
        reproj_errors_px=errors,
        n_queries=len(results),
        n_failed=sum(r.failed for r in results),
    )


def localize_matches(
    matches: MatchSet,
    keypoints_px: np.ndarray,
    points_xyz: np.ndarray,
    gt_pose: Pose,
    k: CameraIntrinsics,
    ransac_cfg: RansacConfig,
) -> tuple[QueryResult, PoseEstimate | None]:
    """Run PnP-RANSAC + LM on a match set and score against the GT pose."""
    if len(matches) < 4:
        return QueryResult.failure(), None
    kp = np.asarray(keypoints_px, dtype=np.float64)[matches.pairs[:, 0]]
    pts = np.asarray(points_xyz, dtype=np.float64)[matches.pairs[:, 1]]
    estimate = ransac_pnp(kp, pts, k, ransac_cfg)
    if estimate is None:
        return QueryResult.failure(), None
    estimate = refine_lm(estimate, kp, pts, k)
    errors, _ = reprojection_errors(matches, estimate.pose, gt_pose, k, points_xyz)
    rot_err, trans_err = pose_error(estimate.pose, gt_pose)
    result = QueryResult(
        reproj_errors_px=errors,
        rotation_err_deg=rot_err,
        translation_err=trans_err,
        n_final=len(matches),
        n_inliers=len(estimate.inliers),
    )
    return result, estimate


def oracle_result(
    keypoints_px: np.ndarray,
    points_xyz: np.ndarray,
    gt_pose: Pose,
    k: CameraIntrinsics,
    gt_cfg: GtMatchConfig,
    ransac_cfg: RansacConfig,
) -> QueryResult:
    """Upper-bound result: the pose stack fed with ground-truth matches."""
    gt = ground_truth_matches(keypoints_px, points_xyz, gt_pose, k, gt_cfg)
    if len(gt) == 0:
        return QueryResult.failure()
    result, _ = localize_matches(gt, keypoints_px, points_xyz, gt_pose, k, ransac_cfg)
    return result


def oracle_report(
    scenes: list[tuple[np.ndarray, np.ndarray, Pose, CameraIntrinsics]],
    gt_cfg: GtMatchConfig = GtMatchConfig(),
    ransac_cfg: RansacConfig = RansacConfig(),
) -> EvalReport:
    """Oracle upper bound over (keypoints, points, gt_pose, intrinsics) scenes."""
    results = [
        oracle_result(kp, pts, pose, k, gt_cfg, ransac_cfg) for kp, pts, pose, k in scenes
    ]
    return build_report(results)
