"""Robust camera pose estimation from 2D-3D matches.

The minimal three-point resection problem is reduced to a quartic by taking
the resultant of two quadratics in one depth ratio; each admissible root
yields camera-frame point positions that are aligned to the world points by
a closed-form rigid fit.  RANSAC scores candidate poses by reprojection
inliers, and an optional Levenberg-Marquardt pass polishes the winner on its
inlier set.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DegenerateSampleError, InsufficientDataError
from .geometry import CameraIntrinsics, Pose, camera_coords


@dataclass(frozen=True)
class RansacConfig:
    threshold_px: float = 8.0
    max_iterations: int = 1000
    confidence: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.threshold_px <= 0:
            raise ConfigError(f"threshold must be > 0, got {self.threshold_px}")
        if self.max_iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.max_iterations}")
        if not 0.0 < self.confidence < 1.0:
            raise ConfigError(f"confidence must lie in (0, 1), got {self.confidence}")


@dataclass
class PoseEstimate:
    pose: Pose
    inliers: np.ndarray  # indices into the input match arrays
    rms_px: float
    converged: bool = True


def _unit_rays(pixels: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    rays = np.empty((pixels.shape[0], 3))
    rays[:, 0] = (pixels[:, 0] - k.cx) / k.fx
    rays[:, 1] = (pixels[:, 1] - k.cy) / k.fy
    rays[:, 2] = 1.0
    return rays / np.linalg.norm(rays, axis=1, keepdims=True)


def _rigid_fit(src: np.ndarray, dst: np.ndarray) -> Pose:
    """Proper rigid transform with R @ src + t = dst (least squares)."""
    src_c = src - src.mean(axis=0)
    dst_c = dst - dst.mean(axis=0)
    h = src_c.T @ dst_c
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = dst.mean(axis=0) - r @ src.mean(axis=0)
    # re-orthonormalize to keep the Pose invariants tight
    uu, _, vv = np.linalg.svd(r)
    r = uu @ vv
    if np.linalg.det(r) < 0:
        uu[:, 2] *= -1
        r = uu @ vv
    return Pose(r, t)


def _reproject_px(points: np.ndarray, pose: Pose, k: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Pixels plus an in-front mask; behind-camera entries are garbage."""
    cam = camera_coords(points, pose)
    z = cam[:, 2]
    ok = z > 1e-12
    zsafe = np.where(ok, z, 1.0)
    px = np.stack([k.fx * cam[:, 0] / zsafe + k.cx, k.fy * cam[:, 1] / zsafe + k.cy], axis=1)
    return px, ok


def p3p_solve(
    pixels: np.ndarray, points: np.ndarray, k: CameraIntrinsics
) -> list[Pose]:
    """All real solutions of three-point resection, up to four poses.

    Each returned pose reprojects the defining triple within 1e-6 px.
    Raises on collinear or coincident world points.
    """
    pixels = np.asarray(pixels, dtype=np.float64).reshape(3, 2)
    points = np.asarray(points, dtype=np.float64).reshape(3, 3)
    cross = np.cross(points[1] - points[0], points[2] - points[0])
    scale = max(np.linalg.norm(points[1] - points[0]), np.linalg.norm(points[2] - points[0]))
    if scale <= 0 or np.linalg.norm(cross) < 1e-12 * scale * scale:
        raise DegenerateSampleError("world points are collinear or coincident")

    rays = _unit_rays(pixels, k)
    cos_a = float(rays[1] @ rays[2])
    cos_b = float(rays[0] @ rays[2])
    cos_g = float(rays[0] @ rays[1])
    a2 = float(((points[1] - points[2]) ** 2).sum())
    b2 = float(((points[0] - points[2]) ** 2).sum())
    c2 = float(((points[0] - points[1]) ** 2).sum())

    # two quadratics in u with coefficients polynomial in v, from the ratios
    # of the three distance equations (s2 = u*s1, s3 = v*s1):
    #   C2 u^2 + C1(v) u + C0(v) = 0   [from a,b equations]
    #   D2 u^2 + D1   u + D0(v) = 0   [from c,b equations]
    c2_coef = -b2
    c1_lin = np.array([0.0, 2.0 * b2 * cos_a])  # C1 = 0 + (2 b^2 cos_a) v
    c0_quad = np.array([a2, -2.0 * a2 * cos_b, a2 - b2])  # a2 - 2 a2 cos_b v + (a2-b2) v^2
    d2_coef = -b2
    d1_const = 2.0 * b2 * cos_g
    d0_quad = np.array([c2 - b2, -2.0 * c2 * cos_b, c2])

    def polymul(p, q):
        return np.convolve(p, q)

    def polysub(p, q):
        n = max(len(p), len(q))
        out = np.zeros(n)
        out[: len(p)] += p
        out[: len(q)] -= q
        return out

    # resultant of the two quadratics: (C2 D0 - D2 C0)^2 - (C2 D1 - D2 C1)(C1 D0 - D1 C0)
    e = polysub(c2_coef * d0_quad, d2_coef * c0_quad)
    f = polysub([c2_coef * d1_const], d2_coef * c1_lin)
    g = polysub(polymul(c1_lin, d0_quad), d1_const * c0_quad)
    quartic = polysub(polymul(e, e), polymul(f, g))  # ascending in v, degree <= 4

    # trim tiny leading coefficients for stability
    coeffs = quartic.copy()
    lead = np.max(np.abs(coeffs))
    if lead == 0:
        raise DegenerateSampleError("resection polynomial vanished")
    coeffs = coeffs / lead
    while len(coeffs) > 1 and abs(coeffs[-1]) < 1e-14:
        coeffs = coeffs[:-1]
    if len(coeffs) < 2:
        raise DegenerateSampleError("resection polynomial is constant")
    roots = np.polynomial.polynomial.polyroots(coeffs)

    deriv = np.polynomial.polynomial.polyder(coeffs)
    poses: list[Pose] = []
    for root in roots:
        # double roots surface as conjugate pairs with small imaginary parts;
        # admit them generously, the reprojection gate below rejects fakes
        if abs(root.imag) > 1e-4 * max(1.0, abs(root.real)):
            continue
        v = float(root.real)
        # polish with a few Newton steps on the quartic
        for _ in range(3):
            fv = np.polynomial.polynomial.polyval(v, coeffs)
            dv = np.polynomial.polynomial.polyval(v, deriv)
            if dv == 0:
                break
            v -= fv / dv
        if v <= 0:
            continue
        denom_u = c2_coef * d1_const - d2_coef * float(np.polynomial.polynomial.polyval(v, c1_lin))
        numer_u = d2_coef * float(np.polynomial.polynomial.polyval(v, c0_quad)) - c2_coef * float(
            np.polynomial.polynomial.polyval(v, d0_quad)
        )
        # candidate u from the shared-root formula plus, because that formula
        # degenerates for symmetric configurations, the roots of the second
        # quadratic; polishing and the reprojection gate reject the fakes
        u_candidates = []
        if denom_u != 0.0:
            u_candidates.append(numer_u / denom_u)
        d0v = float(np.polynomial.polynomial.polyval(v, d0_quad))
        disc = d1_const * d1_const - 4.0 * d2_coef * d0v
        if disc >= 0:
            sq = np.sqrt(disc)
            u_candidates.append((-d1_const + sq) / (2.0 * d2_coef))
            u_candidates.append((-d1_const - sq) / (2.0 * d2_coef))
        for u0 in u_candidates:
            u, vv = float(u0), v
            if u <= 0:
                continue
            # polish (u, v) on the original pair of distance-ratio equations
            for _ in range(5):
                g1 = a2 * (1.0 + vv * vv - 2.0 * vv * cos_b) - b2 * (
                    u * u + vv * vv - 2.0 * u * vv * cos_a
                )
                g2 = c2 * (1.0 + vv * vv - 2.0 * vv * cos_b) - b2 * (
                    1.0 + u * u - 2.0 * u * cos_g
                )
                j11 = -2.0 * b2 * (u - vv * cos_a)
                j12 = 2.0 * a2 * (vv - cos_b) - 2.0 * b2 * (vv - u * cos_a)
                j21 = -2.0 * b2 * (u - cos_g)
                j22 = 2.0 * c2 * (vv - cos_b)
                det = j11 * j22 - j12 * j21
                if abs(det) < 1e-300:
                    break
                du = (g1 * j22 - g2 * j12) / det
                dv = (g2 * j11 - g1 * j21) / det
                u -= du
                vv -= dv
                if abs(du) + abs(dv) < 1e-15 * (abs(u) + abs(vv) + 1.0):
                    break
            if u <= 0 or vv <= 0:
                continue
            s1_sq = b2 / (1.0 + vv * vv - 2.0 * vv * cos_b)
            if s1_sq <= 0:
                continue
            s1 = np.sqrt(s1_sq)
            depths = np.array([s1, u * s1, vv * s1])
            cam_pts = rays * depths[:, None]
            pose = _rigid_fit(points, cam_pts)
            px, ok = _reproject_px(points, pose, k)
            if ok.all() and np.linalg.norm(px - pixels, axis=1).max() <= 1e-6:
                if not any(
                    np.allclose(p.R, pose.R, atol=1e-9) and np.allclose(p.t, pose.t, atol=1e-9)
                    for p in poses
                ):
                    poses.append(pose)
    return poses[:4]


def ransac_pnp(
    keypoints_px: np.ndarray,
    points_xyz: np.ndarray,
    k: CameraIntrinsics,
    cfg: RansacConfig = RansacConfig(),
) -> PoseEstimate | None:
    """Best-consensus pose over seeded minimal samples; None if no model
    reaches 4 inliers.

    Scoring is inlier count, ties broken by lower inlier RMS, then by the
    earlier sample; iteration stops adaptively once the configured confidence
    is reached.
    """
    keypoints_px = np.asarray(keypoints_px, dtype=np.float64).reshape(-1, 2)
    points_xyz = np.asarray(points_xyz, dtype=np.float64).reshape(-1, 3)
    n = keypoints_px.shape[0]
    if n != points_xyz.shape[0]:
        raise InsufficientDataError("keypoint and point counts differ")
    if n < 4:
        raise InsufficientDataError(f"PnP needs at least 4 matches, got {n}")

    rng = np.random.default_rng(cfg.seed)
    best: tuple[int, float, int] | None = None  # (count, rms, trial) for comparison
    best_pose: Pose | None = None
    needed = cfg.max_iterations
    trial = 0
    while trial < min(needed, cfg.max_iterations):
        sample = rng.choice(n, size=3, replace=False)
        trial += 1
        try:
            candidates = p3p_solve(keypoints_px[sample], points_xyz[sample], k)
        except DegenerateSampleError:
            continue
        for pose in candidates:
            px, ok = _reproject_px(points_xyz, pose, k)
            err = np.linalg.norm(px - keypoints_px, axis=1)
            err[~ok] = np.inf
            inliers = err <= cfg.threshold_px
            count = int(inliers.sum())
            if count < 4:
                continue
            rms = float(np.sqrt((err[inliers] ** 2).mean()))
            key = (-count, rms, trial)
            if best is None or key < best:
                best = key
                best_pose = pose
                ratio = count / n
                if ratio >= 1.0:
                    needed = trial
                else:
                    denom = np.log1p(-min(ratio**3, 1.0 - 1e-12))
                    needed = int(np.ceil(np.log(1.0 - cfg.confidence) / denom))
    if best_pose is None:
        return None
    px, ok = _reproject_px(points_xyz, best_pose, k)
    err = np.linalg.norm(px - keypoints_px, axis=1)
    err[~ok] = np.inf
    inliers = np.nonzero(err <= cfg.threshold_px)[0]
    rms = float(np.sqrt((err[inliers] ** 2).mean()))
    return PoseEstimate(best_pose, inliers, rms)


def _hat(w: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def _rodrigues(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3) + _hat(w)
    axis = w / theta
    hatted = _hat(axis)
    return np.eye(3) + np.sin(theta) * hatted + (1.0 - np.cos(theta)) * (hatted @ hatted)


def _reprojection_cost(pose, pts, obs, k):
    px, ok = _reproject_px(pts, pose, k)
    res = px - obs
    res[~ok] = 1e6  # behind-camera inliers dominate the cost
    return res.ravel(), float((res**2).sum())


def refine_lm(
    estimate: PoseEstimate,
    keypoints_px: np.ndarray,
    points_xyz: np.ndarray,
    k: CameraIntrinsics,
    max_iterations: int = 100,
) -> PoseEstimate:
    """Levenberg-Marquardt on the inlier reprojection error.

    Rotation increments are axis-angle, composed onto the current rotation;
    lambda scales x10 on reject and /10 on accept, so the final cost never
    exceeds the initial one.
    """
    if len(estimate.inliers) < 4:
        raise InsufficientDataError(
            f"refinement needs >= 4 inliers, got {len(estimate.inliers)}"
        )
    obs = np.asarray(keypoints_px, dtype=np.float64).reshape(-1, 2)[estimate.inliers]
    pts = np.asarray(points_xyz, dtype=np.float64).reshape(-1, 3)[estimate.inliers]

    pose = estimate.pose
    _, cost = _reprojection_cost(pose, pts, obs, k)
    lam = 1e-3
    converged = False
    for _ in range(max_iterations):
        cam = camera_coords(pts, pose)
        z = cam[:, 2]
        ok = z > 1e-12
        zs = np.where(ok, z, 1.0)
        px = np.stack([k.fx * cam[:, 0] / zs + k.cx, k.fy * cam[:, 1] / zs + k.cy], axis=1)
        res = px - obs
        res[~ok] = 1e6

        # d(pixel)/d(cam point), then chain through cam = exp(w)^ R q + t
        jac = np.zeros((pts.shape[0], 2, 6))
        for i in range(pts.shape[0]):
            if not ok[i]:
                continue
            x, y, zz = cam[i]
            dpix = np.array(
                [[k.fx / zz, 0.0, -k.fx * x / (zz * zz)], [0.0, k.fy / zz, -k.fy * y / (zz * zz)]]
            )
            dcam = np.hstack([-_hat(cam[i] - pose.t), np.eye(3)])  # wrt (w, t)
            jac[i] = dpix @ dcam
        j = jac.reshape(-1, 6)
        r = res.ravel()
        jtj = j.T @ j
        jtr = j.T @ r
        if np.linalg.norm(jtr, np.inf) < 1e-14:
            converged = True
            break
        stepped = False
        for _ in range(20):
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj) + 1e-12), -jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            new_pose = Pose(_rodrigues(delta[:3]) @ pose.R, pose.t + delta[3:])
            _, new_cost = _reprojection_cost(new_pose, pts, obs, k)
            if new_cost < cost:
                pose = new_pose
                improvement = cost - new_cost
                cost = new_cost
                lam = max(lam / 10.0, 1e-12)
                stepped = True
                if improvement < 1e-16 * max(cost, 1.0) or np.linalg.norm(delta) < 1e-14:
                    converged = True
                break
            lam *= 10.0
        if not stepped:
            converged = True  # no descent direction left: local optimum
            break
        if converged:
            break
    rms = float(np.sqrt(cost / len(estimate.inliers)))
    return replace(estimate, pose=pose, rms_px=rms, converged=converged)


def pose_error(estimate: Pose, gt: Pose) -> tuple[float, float]:
    """(rotation error in degrees, translation error in scene units).

    The angle of R_est R_gt^T comes from atan2 of the skew norm against the
    trace cosine, which stays accurate for tiny angles where arccos loses
    half the float precision.
    """
    rel = estimate.R @ gt.R.T
    skew = 0.5 * np.array(
        [rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]]
    )
    cos = (np.trace(rel) - 1.0) / 2.0
    angle = np.degrees(np.arctan2(np.linalg.norm(skew), cos))
    trans = float(np.linalg.norm(estimate.t - gt.t))
    return float(angle), trans
