"""Synthetic scene-pair generation with outlier-ratio control.

A pair consists of a query camera (whose pose is the localization target)
and a database camera (a perturbed viewpoint whose pose lifts the 3D points
to bearing vectors).  Matched points are sampled in the query frustum and
projected to keypoints; distractors are added on both sides until the
outlier ratio (unmatched keypoints over the larger side) hits the target.
Distractors keep a safety margin from all projections so the ground-truth
accounting recounts exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import Camera, Scene
from .errors import ConfigError
from .geometry import CameraIntrinsics, GtMatchConfig, Pose, bearing_from_pixel, camera_coords

DISTRACTOR_MARGIN = 2.0  # in units of the GT epsilon
NOISE_CAP = 0.45  # bearing noise is clipped to this fraction of epsilon


@dataclass(frozen=True)
class SynthConfig:
    n_points: int = 64  # total per side
    outlier_ratio: float = 0.0
    seed: int = 0
    fx: float = 500.0
    fy: float = 500.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480
    margin_px: float = 40.0
    depth_min: float = 3.0
    depth_max: float = 9.0
    n_blobs: int = 6  # scene structure: point clusters ("objects")
    blob_sigma: float = 0.15  # world-space spread within a blob
    blob_min_sep_px: float = 110.0  # minimum image distance between blob centers
    template_jitter: float = 0.01  # per-point deviation from the shared constellation
    rot_jitter_deg: float = 8.0  # db viewpoint rotation offset
    trans_jitter: float = 0.25  # db viewpoint translation offset (scene units)
    bearing_noise: float = 0.0  # sigma in normalized coordinates
    color_noise: float = 0.0  # sigma per RGB channel
    gt: GtMatchConfig = field(default_factory=GtMatchConfig)

    def __post_init__(self):
        if not 0.0 <= self.outlier_ratio <= 1.0:
            raise ConfigError(f"outlier_ratio must lie in [0, 1], got {self.outlier_ratio}")
        if self.n_points < 1:
            raise ConfigError(f"n_points must be >= 1, got {self.n_points}")
        if self.depth_min <= 0 or self.depth_max <= self.depth_min:
            raise ConfigError("depth range must satisfy 0 < min < max")
        if self.n_blobs < 1:
            raise ConfigError(f"n_blobs must be >= 1, got {self.n_blobs}")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy)


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _axis_rotation(rng: np.random.Generator, angle_deg: float) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    th = np.deg2rad(angle_deg)
    hat = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + np.sin(th) * hat + (1 - np.cos(th)) * (hat @ hat)


def _backproject(pix, depth, pose: Pose, k: CameraIntrinsics) -> np.ndarray:
    cam = np.array(
        [(pix[0] - k.cx) / k.fx * depth, (pix[1] - k.cy) / k.fy * depth, depth]
    )
    return pose.R.T @ (cam - pose.t)


def synth_scene_pair(cfg: SynthConfig) -> Scene:
    """One seeded scene pair; matched/unmatched counts follow cfg.outlier_ratio.

    With total T per side and ratio r, round((1 - r) * T) pairs match and the
    remainder on each side are distractors, so the unmatched count over
    max(N, M) recounts to r exactly (up to rounding).
    """
    rng = np.random.default_rng(cfg.seed)
    k = cfg.intrinsics
    total = cfg.n_points
    n_matched = int(round((1.0 - cfg.outlier_ratio) * total))
    n_extra = total - n_matched
    eps = cfg.gt.epsilon

    pose_q = Pose(_random_rotation(rng), rng.uniform(-2.0, 2.0, size=3))
    for _ in range(64):
        angle = rng.uniform(0.0, cfg.rot_jitter_deg)
        pose_db = Pose(
            _axis_rotation(rng, angle) @ pose_q.R,
            pose_q.t + rng.normal(scale=cfg.trans_jitter, size=3),
        )
        # accept a db view that keeps the full query frustum at sane depths
        corners = np.array(
            [
                _backproject((u, v), d, pose_q, k)
                for u in (cfg.margin_px, cfg.width - cfg.margin_px)
                for v in (cfg.margin_px, cfg.height - cfg.margin_px)
                for d in (cfg.depth_min, cfg.depth_max)
            ]
        )
        if camera_coords(corners, pose_db)[:, 2].min() > 0.5:
            break
    else:
        raise ConfigError("could not sample a database view facing the scene")

    lo = np.array([cfg.margin_px, cfg.margin_px])
    hi = np.array([cfg.width - cfg.margin_px, cfg.height - cfg.margin_px])

    # blob centers: separated image positions at varying depths; all blobs
    # share one jittered template constellation, so their local structure is
    # near-identical and only context can tell them apart
    centers_world = []
    center_pix = []
    guard = 0
    while len(centers_world) < cfg.n_blobs:
        guard += 1
        if guard > 500 * cfg.n_blobs:
            raise ConfigError("blob placement stalled; lower n_blobs or blob_min_sep_px")
        pix = rng.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo))
        if center_pix and np.linalg.norm(np.array(center_pix) - pix, axis=1).min() < cfg.blob_min_sep_px:
            continue
        depth = rng.uniform(cfg.depth_min, cfg.depth_max)
        world = _backproject(pix, depth, pose_q, k)
        if camera_coords(world, pose_db)[0, 2] <= 0.5:
            continue
        centers_world.append(world)
        center_pix.append(pix)
    centers_world = np.array(centers_world)

    slots_per_blob = int(np.ceil(3.0 * total / cfg.n_blobs)) + 2
    template = rng.normal(scale=cfg.blob_sigma, size=(slots_per_blob, 3))
    population = (
        centers_world[:, None, :]
        + template[None, :, :]
        + rng.normal(scale=cfg.template_jitter, size=(cfg.n_blobs, slots_per_blob, 3))
    ).reshape(-1, 3)
    pop_order = rng.permutation(population.shape[0])
    pop_cursor = [0]

    def sample_world_point():
        # walk the shuffled population; recycle with fresh jitter if exhausted
        if pop_cursor[0] >= pop_order.size:
            idx = int(rng.integers(population.shape[0]))
            return population[idx] + rng.normal(scale=cfg.blob_sigma, size=3)
        world = population[pop_order[pop_cursor[0]]]
        pop_cursor[0] += 1
        return world

    def in_query_image(world):
        cam = camera_coords(world, pose_q)[0]
        if cam[2] <= 0.5:
            return None
        pix = np.array([k.fx * cam[0] / cam[2] + k.cx, k.fy * cam[1] / cam[2] + k.cy])
        if (pix < lo).any() or (pix > hi).any():
            return None
        return pix

    # matched 3D points, their (noisy) keypoints, and shared colors
    matched_world, matched_kp = [], []
    guard = 0
    while len(matched_world) < n_matched:
        guard += 1
        if guard > 500 * max(n_matched, 1):
            raise ConfigError("matched-point sampling stalled; widen the frustum")
        world = sample_world_point()
        pix = in_query_image(world)
        if pix is None or camera_coords(world, pose_db)[0, 2] <= 0.5:
            continue
        noise = rng.normal(scale=cfg.bearing_noise, size=2) if cfg.bearing_noise else np.zeros(2)
        norm = np.linalg.norm(noise)
        cap = NOISE_CAP * eps
        if norm > cap:
            noise *= cap / norm
        kp = pix + noise * np.array([k.fx, k.fy])
        matched_world.append(world)
        matched_kp.append(kp)
    matched_world = np.array(matched_world).reshape(n_matched, 3)
    matched_kp = np.array(matched_kp).reshape(n_matched, 2)
    base_colors = rng.uniform(size=(n_matched, 3))

    def color_jitter(colors):
        if not cfg.color_noise:
            return colors.copy()
        return np.clip(colors + rng.normal(scale=cfg.color_noise, size=colors.shape), 0.0, 1.0)

    def bearing_of_world(world_pts: np.ndarray) -> np.ndarray:
        """Query-frame bearings; rows behind the camera become +inf."""
        world_pts = np.atleast_2d(world_pts)
        cam = camera_coords(world_pts, pose_q)
        out = np.full((world_pts.shape[0], 2), np.inf)
        front = cam[:, 2] > 0
        out[front] = cam[front, :2] / cam[front, 2:3]
        return out

    # distractor 3D points: blob-shaped clutter in the db frustum, clear of
    # every query keypoint
    kp_bearings = bearing_from_pixel(matched_kp, k) if n_matched else np.empty((0, 2))
    extra_world = []
    guard = 0
    while len(extra_world) < n_extra:
        guard += 1
        if guard > 500 * max(n_extra, 1):
            raise ConfigError("distractor sampling stalled; loosen the margins")
        world = sample_world_point()
        if camera_coords(world, pose_db)[0, 2] <= 0.5:
            continue
        b = bearing_of_world(world)[0]
        if np.isfinite(b).all() and kp_bearings.size:
            if np.linalg.norm(kp_bearings - b, axis=1).min() <= DISTRACTOR_MARGIN * eps:
                continue
        extra_world.append(world)
    extra_world = np.array(extra_world).reshape(n_extra, 3)

    # distractor keypoints: blob-shaped image clutter, clear of every 3D
    # point's query-frame bearing
    all_world = np.concatenate([matched_world, extra_world])
    world_bearings = bearing_of_world(all_world) if all_world.size else np.empty((0, 2))
    finite_wb = world_bearings[np.isfinite(world_bearings).all(axis=1)]
    extra_kp = []
    guard = 0
    while len(extra_kp) < n_extra:
        guard += 1
        if guard > 500 * max(n_extra, 1):
            raise ConfigError("keypoint distractor sampling stalled; loosen the margins")
        pix = in_query_image(sample_world_point())
        if pix is None:
            continue
        b = bearing_from_pixel(pix, k)
        if finite_wb.size and np.linalg.norm(finite_wb - b, axis=1).min() <= DISTRACTOR_MARGIN * eps:
            continue
        extra_kp.append(pix)
    extra_kp = np.array(extra_kp).reshape(n_extra, 2)

    # assemble with shuffled indices on both sides
    kp_xy = np.concatenate([matched_kp, extra_kp])
    kp_rgb = np.concatenate([color_jitter(base_colors), rng.uniform(size=(n_extra, 3))])
    pt_xyz = np.concatenate([matched_world, extra_world])
    pt_rgb = np.concatenate([color_jitter(base_colors), rng.uniform(size=(n_extra, 3))])
    perm_kp = rng.permutation(total)
    perm_pt = rng.permutation(total)
    inv_kp = np.empty(total, dtype=np.int64)
    inv_kp[perm_kp] = np.arange(total)
    inv_pt = np.empty(total, dtype=np.int64)
    inv_pt[perm_pt] = np.arange(total)
    gt_pairs = np.stack([inv_kp[np.arange(n_matched)], inv_pt[np.arange(n_matched)]], axis=1)

    return Scene(
        cameras=[Camera(k, pose_q), Camera(k, pose_db)],
        points_xyz=pt_xyz[perm_pt],
        points_rgb=pt_rgb[perm_pt],
        keypoints_xy=[kp_xy[perm_kp], np.empty((0, 2))],
        keypoints_rgb=[kp_rgb[perm_kp], np.empty((0, 3))],
        gt_matches=[gt_pairs, None],
        scene_id=f"synth-{cfg.seed}",
    )
