"""Pinhole camera model, bearing-vector lifting, and ground-truth matching.

Bearing vectors put 2D keypoints and 3D points in one space: a pixel is
uplifted through the inverse intrinsics, a 3D point is rotated into the
camera frame and dehomogenized.  Only the two free components are stored
(the third is 1 by construction).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, ConfigError, InputError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError(f"focal lengths must be positive, got {self.fx}, {self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform: x_cam = R @ x_world + t."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        if R.shape != (3, 3):
            raise InputError(f"rotation must be 3x3, got {R.shape}")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
            raise InputError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise InputError("rotation determinant is not 1 within 1e-9")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class GtMatchConfig:
    """Reprojection threshold for ground-truth match selection.

    ``space`` picks the residual metric: raw pixels or normalized (bearing)
    coordinates.  The default mirrors the evaluation convention: normalized
    space with epsilon 0.001, which sidesteps the camera intrinsics.
    """

    epsilon: float = 0.001
    space: str = "normalized"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.space not in ("pixel", "normalized"):
            raise ConfigError(f"space must be 'pixel' or 'normalized', got {self.space!r}")


def camera_coords(points: np.ndarray, pose: Pose) -> np.ndarray:
    """World points (n,3) to camera-frame coordinates (n,3)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return pts @ pose.R.T + pose.t


def project(q: np.ndarray, pose: Pose, k: CameraIntrinsics) -> np.ndarray:
    """Perspective projection of world points to pixels; rejects z <= 0."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    cam = camera_coords(q, pose)
    z = cam[:, 2]
    if np.any(z <= 0):
        bad = int(np.argmax(z <= 0))
        raise BehindCameraError(
            f"point {bad} has non-positive depth {z[bad]:.6g} in the camera frame"
        )
    px = np.empty((cam.shape[0], 2))
    px[:, 0] = k.fx * cam[:, 0] / z + k.cx
    px[:, 1] = k.fy * cam[:, 1] / z + k.cy
    return px[0] if single else px


def bearing_from_pixel(p: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Uplift pixels to bearing vectors through the inverse intrinsics."""
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    p2 = np.atleast_2d(p)
    b = np.empty_like(p2)
    b[:, 0] = (p2[:, 0] - k.cx) / k.fx
    b[:, 1] = (p2[:, 1] - k.cy) / k.fy
    return b[0] if single else b


def bearing_from_point(q: np.ndarray, pose: Pose) -> np.ndarray:
    """Bearing vector of world points: camera coordinates over their depth."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    cam = camera_coords(q, pose)
    z = cam[:, 2]
    if np.any(z <= 0):
        bad = int(np.argmax(z <= 0))
        raise BehindCameraError(
            f"point {bad} has non-positive depth {z[bad]:.6g} in the camera frame"
        )
    b = cam[:, :2] / z[:, None]
    return b[0] if single else b


@dataclass
class MatchSet:
    """Index pairs (keypoint, point) with one confidence value per pair."""

    pairs: np.ndarray  # (P, 2) int64
    confidence: np.ndarray  # (P,) float64

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        self.confidence = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
        if self.pairs.shape[0] != self.confidence.shape[0]:
            raise InputError(
                f"{self.pairs.shape[0]} pairs but {self.confidence.shape[0]} confidences"
            )

    def __len__(self):
        return self.pairs.shape[0]

    @staticmethod
    def empty() -> "MatchSet":
        return MatchSet(np.empty((0, 2), dtype=np.int64), np.empty(0))


def ground_truth_matches(
    keypoints_px: np.ndarray,
    points_xyz: np.ndarray,
    pose: Pose,
    k: CameraIntrinsics,
    cfg: GtMatchConfig = GtMatchConfig(),
) -> MatchSet:
    """All (keypoint, point) pairs with reprojection residual <= epsilon.

    Residuals are measured in the space selected by the config.  Points with
    non-positive depth never match.  One keypoint may match several points;
    reducing to one-to-one is the label builder's job.  The stored confidence
    is the residual distance itself.
    """
    kp = np.atleast_2d(np.asarray(keypoints_px, dtype=np.float64))
    pts = np.atleast_2d(np.asarray(points_xyz, dtype=np.float64))
    if kp.shape[0] == 0 or pts.shape[0] == 0:
        raise InputError("ground_truth_matches needs nonempty keypoints and points")

    cam = camera_coords(pts, pose)
    in_front = cam[:, 2] > 0
    if cfg.space == "pixel":
        ref = np.empty((pts.shape[0], 2))
        zs = np.where(in_front, cam[:, 2], 1.0)
        ref[:, 0] = k.fx * cam[:, 0] / zs + k.cx
        ref[:, 1] = k.fy * cam[:, 1] / zs + k.cy
        obs = kp
    else:
        ref = np.empty((pts.shape[0], 2))
        zs = np.where(in_front, cam[:, 2], 1.0)
        ref = cam[:, :2] / zs[:, None]
        obs = bearing_from_pixel(kp, k)

    diff = obs[:, None, :] - ref[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    ok = (dist <= cfg.epsilon) & in_front[None, :]
    ns, ms = np.nonzero(ok)
    return MatchSet(np.stack([ns, ms], axis=1), dist[ns, ms])
