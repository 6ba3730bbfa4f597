"""Scene and weights serialization.

Scenes are human-auditable JSON; weights are a small binary container with
bit-exact round trips.  Loads validate every invariant up front and raise
typed errors naming the offending field, never returning partial data.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, SceneValidationError
from .geometry import CameraIntrinsics, Pose
from .params import ParamBundle

SCENE_FORMAT = "gcmatch-scene"
SCENE_VERSION = 1
WEIGHTS_MAGIC = b"DGCW"
WEIGHTS_VERSION = 1


@dataclass
class Camera:
    intrinsics: CameraIntrinsics
    pose: Pose


@dataclass
class Scene:
    """One localization scene: cameras, a colored point cloud, per-camera
    keypoints, and optional ground-truth matches.

    Convention: camera 0 is the query view (its pose is the localization
    target); camera 1, when present, is the database view whose pose lifts
    the 3D points to bearing vectors.
    """

    cameras: list[Camera]
    points_xyz: np.ndarray  # (M, 3)
    points_rgb: np.ndarray  # (M, 3) in [0, 1]
    keypoints_xy: list[np.ndarray]  # per camera (N_i, 2) pixels
    keypoints_rgb: list[np.ndarray]  # per camera (N_i, 3) in [0, 1]
    gt_matches: list[np.ndarray | None] = field(default_factory=list)
    scene_id: str = ""

    @property
    def query_camera(self) -> Camera:
        return self.cameras[0]

    @property
    def db_camera(self) -> Camera:
        return self.cameras[1] if len(self.cameras) > 1 else self.cameras[0]


def _check_rgb(arr: np.ndarray, where: str):
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise SceneValidationError(f"{where} must be Nx3, got shape {arr.shape}")
    bad = np.nonzero((arr < 0.0) | (arr > 1.0))
    if bad[0].size:
        i, j = int(bad[0][0]), int(bad[1][0])
        raise SceneValidationError(
            f"{where}[{i}].rgb[{j}] = {arr[i, j]} outside [0, 1]"
        )


def scene_to_dict(scene: Scene) -> dict:
    doc = {
        "format": SCENE_FORMAT,
        "version": SCENE_VERSION,
        "scene_id": scene.scene_id,
        "cameras": [
            {
                "fx": cam.intrinsics.fx,
                "fy": cam.intrinsics.fy,
                "cx": cam.intrinsics.cx,
                "cy": cam.intrinsics.cy,
                "R": [float(x) for x in cam.pose.R.ravel()],
                "t": [float(x) for x in cam.pose.t],
            }
            for cam in scene.cameras
        ],
        "points3d": [
            {"xyz": [float(v) for v in xyz], "rgb": [float(v) for v in rgb]}
            for xyz, rgb in zip(scene.points_xyz, scene.points_rgb)
        ],
        "keypoints": [
            [
                {"xy": [float(v) for v in xy], "rgb": [float(v) for v in rgb]}
                for xy, rgb in zip(kxy, krgb)
            ]
            for kxy, krgb in zip(scene.keypoints_xy, scene.keypoints_rgb)
        ],
    }
    if any(g is not None for g in scene.gt_matches):
        doc["gt_matches"] = [
            None if g is None else [[int(a), int(b)] for a, b in g]
            for g in scene.gt_matches
        ]
    return doc


def save_scene(scene: Scene, path):
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=1, sort_keys=True))


def scene_from_dict(doc: dict) -> Scene:
    if doc.get("format") != SCENE_FORMAT:
        raise SceneValidationError(f"format = {doc.get('format')!r}, expected {SCENE_FORMAT!r}")
    if doc.get("version") != SCENE_VERSION:
        raise SceneValidationError(f"version = {doc.get('version')!r}, expected {SCENE_VERSION}")
    cameras = []
    for i, cam in enumerate(doc.get("cameras", [])):
        try:
            intr = CameraIntrinsics(cam["fx"], cam["fy"], cam["cx"], cam["cy"])
        except (KeyError, InputError) as exc:
            raise SceneValidationError(f"cameras[{i}]: {exc}") from exc
        R = np.asarray(cam["R"], dtype=np.float64)
        if R.size != 9:
            raise SceneValidationError(f"cameras[{i}].R must have 9 entries, got {R.size}")
        try:
            pose = Pose(R.reshape(3, 3), np.asarray(cam["t"], dtype=np.float64))
        except InputError as exc:
            raise SceneValidationError(f"cameras[{i}].R: {exc}") from exc
        cameras.append(Camera(intr, pose))
    if not cameras:
        raise SceneValidationError("cameras must be nonempty")

    pts = doc.get("points3d", [])
    points_xyz = np.array([p["xyz"] for p in pts], dtype=np.float64).reshape(-1, 3)
    points_rgb = np.array([p["rgb"] for p in pts], dtype=np.float64).reshape(-1, 3)
    _check_rgb(points_rgb, "points3d")

    keypoints_xy, keypoints_rgb = [], []
    kp_doc = doc.get("keypoints", [])
    if len(kp_doc) != len(cameras):
        raise SceneValidationError(
            f"keypoints lists ({len(kp_doc)}) must match cameras ({len(cameras)})"
        )
    for ci, kps in enumerate(kp_doc):
        xy = np.array([p["xy"] for p in kps], dtype=np.float64).reshape(-1, 2)
        rgb = np.array([p["rgb"] for p in kps], dtype=np.float64).reshape(-1, 3)
        _check_rgb(rgb, f"keypoints[{ci}]")
        keypoints_xy.append(xy)
        keypoints_rgb.append(rgb)

    gt_matches: list[np.ndarray | None] = [None] * len(cameras)
    if "gt_matches" in doc and doc["gt_matches"] is not None:
        raw = doc["gt_matches"]
        if len(raw) != len(cameras):
            raise SceneValidationError("gt_matches must have one entry per camera")
        for ci, lst in enumerate(raw):
            if lst is None:
                continue
            arr = np.asarray(lst, dtype=np.int64).reshape(-1, 2)
            if arr.size:
                if arr[:, 0].min() < 0 or arr[:, 0].max() >= len(keypoints_xy[ci]):
                    raise SceneValidationError(
                        f"gt_matches[{ci}] keypoint index out of range"
                    )
                if arr[:, 1].min() < 0 or arr[:, 1].max() >= len(points_xyz):
                    raise SceneValidationError(f"gt_matches[{ci}] point index out of range")
            gt_matches[ci] = arr
    return Scene(
        cameras=cameras,
        points_xyz=points_xyz,
        points_rgb=points_rgb,
        keypoints_xy=keypoints_xy,
        keypoints_rgb=keypoints_rgb,
        gt_matches=gt_matches,
        scene_id=str(doc.get("scene_id", "")),
    )


def load_scene(path) -> Scene:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read scene file {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"scene file {path} is not valid JSON: {exc}") from exc
    return scene_from_dict(doc)


# ---------------------------------------------------------------------------
# weights container
# ---------------------------------------------------------------------------


def save_weights(params: ParamBundle, config: dict, path):
    """Binary layout: magic, version, config-echo JSON, then named tensors
    as little-endian float64."""
    blob = bytearray()
    blob += WEIGHTS_MAGIC
    blob += struct.pack("<I", WEIGHTS_VERSION)
    cfg_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(cfg_bytes))
    blob += cfg_bytes
    blob += struct.pack("<I", len(params))
    for name, arr in params.items():
        name_b = name.encode("utf-8")
        arr = np.asarray(arr, dtype=np.float64)
        blob += struct.pack("<H", len(name_b))
        blob += name_b
        blob += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += arr.astype("<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_weights(path) -> tuple[ParamBundle, dict]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read weights file {path}: {exc}") from exc
    view = memoryview(blob)
    offset = 0

    def take(n: int) -> memoryview:
        nonlocal offset
        if offset + n > len(view):
            raise FormatError(f"weights file truncated at byte {offset}")
        chunk = view[offset : offset + n]
        offset += n
        return chunk

    if bytes(take(4)) != WEIGHTS_MAGIC:
        raise FormatError("bad magic bytes: not a weights file")
    (version,) = struct.unpack("<I", take(4))
    if version != WEIGHTS_VERSION:
        raise FormatError(f"unsupported weights version {version}")
    (cfg_len,) = struct.unpack("<I", take(4))
    try:
        config = json.loads(bytes(take(cfg_len)).decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt config echo: {exc}") from exc
    (n_tensors,) = struct.unpack("<I", take(4))
    params: ParamBundle = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape)
        params[name] = data.astype(np.float64)
    if offset != len(view):
        raise FormatError(f"{len(view) - offset} trailing bytes after tensor data")
    return params, config


def config_mismatches(echo: dict, current: dict) -> list[str]:
    """Human-readable warnings for config-echo keys that differ at runtime."""
    warnings = []
    for key in sorted(set(echo) & set(current)):
        if echo[key] != current[key]:
            warnings.append(
                f"config mismatch for {key!r}: weights carry {echo[key]!r}, runtime uses {current[key]!r}"
            )
    return warnings
