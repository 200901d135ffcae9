"""Deformation model mapping control vectors to 62-point eye-region keypoints."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .channels import (
    AU_NAMES,
    GAZE_NAMES,
    N_AU,
    N_GAZE,
    ControlSequence,
    ControlState,
    channel_index,
    validate_control_state,
)

__all__ = [
    "KEYPOINT_LAYOUT",
    "N_POINTS",
    "LEFT_UPPER_LID",
    "LEFT_LOWER_LID",
    "LEFT_IRIS",
    "LEFT_PUPIL",
    "RIGHT_UPPER_LID",
    "RIGHT_LOWER_LID",
    "RIGHT_IRIS",
    "RIGHT_PUPIL",
    "LEFT_BROW",
    "RIGHT_BROW",
    "GAZE_POINT_INDICES",
    "MIRROR_PERMUTATION",
    "KeypointFrame",
    "KeypointSequence",
    "KeypointSequence3D",
    "DeformationModel",
    "default_model",
    "rotation_matrix",
    "euler_from_rotation",
    "deform",
    "map_frame",
    "map_sequence",
    "mirror_points",
    "save_keypoints_json",
    "load_keypoints_json",
]

# On-wire layout id; consumers match on this string, so it is frozen.
KEYPOINT_LAYOUT = "cogportrait-62-v1"
N_POINTS = 62

# Index blocks.  Per eye: 8 upper lid, 8 lower lid, 4 iris, 1 pupil; then
# 10 brow points per side.  "Left" is the negative-x side of the canonical face.
LEFT_UPPER_LID = tuple(range(0, 8))
LEFT_LOWER_LID = tuple(range(8, 16))
LEFT_IRIS = tuple(range(16, 20))
LEFT_PUPIL = 20
RIGHT_UPPER_LID = tuple(range(21, 29))
RIGHT_LOWER_LID = tuple(range(29, 37))
RIGHT_IRIS = tuple(range(37, 41))
RIGHT_PUPIL = 41
LEFT_BROW = tuple(range(42, 52))
RIGHT_BROW = tuple(range(52, 62))

LEFT_EYE_BLOCK = LEFT_UPPER_LID + LEFT_LOWER_LID + LEFT_IRIS + (LEFT_PUPIL,)
RIGHT_EYE_BLOCK = RIGHT_UPPER_LID + RIGHT_LOWER_LID + RIGHT_IRIS + (RIGHT_PUPIL,)
GAZE_POINT_INDICES = LEFT_IRIS + (LEFT_PUPIL,) + RIGHT_IRIS + (RIGHT_PUPIL,)

_EYE_HALF_SPAN = 0.18  # eye centers sit at x = -+ this


def _build_mirror_permutation() -> np.ndarray:
    perm = np.empty(N_POINTS, dtype=np.intp)
    pairs = [
        (LEFT_UPPER_LID, RIGHT_UPPER_LID),
        (LEFT_LOWER_LID, RIGHT_LOWER_LID),
        (LEFT_IRIS, RIGHT_IRIS),
        ((LEFT_PUPIL,), (RIGHT_PUPIL,)),
        (LEFT_BROW, RIGHT_BROW),
    ]
    for left, right in pairs:
        for a, b in zip(left, right):
            perm[a] = b
            perm[b] = a
    return perm


# Point index permutation swapping the left and right blocks.
MIRROR_PERMUTATION: np.ndarray = _build_mirror_permutation()
MIRROR_PERMUTATION.setflags(write=False)


def mirror_points(points: np.ndarray) -> np.ndarray:
    """Reflect a (..., 62, k) point array about the canonical midline (x -> -x)."""
    out = np.asarray(points, dtype=np.float64)[..., MIRROR_PERMUTATION, :].copy()
    out[..., 0] = -out[..., 0]
    return out


def _check_points(points: np.ndarray, dims: int, what: str) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.shape[-2:] != (N_POINTS, dims):
        raise ValueError(f"{what} must have shape (..., {N_POINTS}, {dims}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    return arr


@dataclass(frozen=True)
class KeypointFrame:
    """One frame of 62 projected 2-D points in normalized image coordinates."""

    points: np.ndarray

    def __post_init__(self) -> None:
        arr = _check_points(self.points, 2, "keypoint frame").copy()
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)


@dataclass(frozen=True)
class KeypointSequence:
    """Projected 2-D keypoints over time, shape (T, 62, 2)."""

    frames: np.ndarray
    fps: float

    def __post_init__(self) -> None:
        arr = _check_points(self.frames, 2, "keypoint sequence")
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise ValueError(f"keypoint sequence must have shape (T, {N_POINTS}, 2), T >= 1")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps!r}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)
        object.__setattr__(self, "fps", float(self.fps))

    def __len__(self) -> int:
        return int(self.frames.shape[0])


@dataclass(frozen=True)
class KeypointSequence3D:
    """Post-rotation, pre-projection 3-D keypoints over time, shape (T, 62, 3)."""

    frames: np.ndarray
    fps: float

    def __post_init__(self) -> None:
        arr = _check_points(self.frames, 3, "3-D keypoint sequence")
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise ValueError(f"3-D keypoint sequence must have shape (T, {N_POINTS}, 3), T >= 1")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps!r}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)
        object.__setattr__(self, "fps", float(self.fps))

    def __len__(self) -> int:
        return int(self.frames.shape[0])


@dataclass(frozen=True)
class DeformationModel:
    """Linear keypoint model: template plus AU bases, gaze offsets, projection.

    template: (62, 3) rest geometry.  au_bases: (10, 62, 3), one displacement
    field per AU channel, zero outside that AU's anatomical subset.
    gaze_bases: (4, 62, 3), displacement per unit gaze magnitude, supported
    only on iris/pupil points.  Projection is weak-perspective about
    principal_point with isotropic scale.
    """

    template: np.ndarray
    au_bases: np.ndarray
    gaze_bases: np.ndarray
    scale: float = 1.0
    principal_point: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self) -> None:
        tmpl = _check_points(self.template, 3, "template").copy()
        au = np.asarray(self.au_bases, dtype=np.float64)
        gz = np.asarray(self.gaze_bases, dtype=np.float64)
        if au.shape != (N_AU, N_POINTS, 3):
            raise ValueError(f"au_bases must have shape ({N_AU}, {N_POINTS}, 3), got {au.shape}")
        if gz.shape != (N_GAZE, N_POINTS, 3):
            raise ValueError(f"gaze_bases must have shape ({N_GAZE}, {N_POINTS}, 3), got {gz.shape}")
        if not (np.all(np.isfinite(au)) and np.all(np.isfinite(gz))):
            raise ValueError("deformation bases contain non-finite values")
        if not self.scale > 0:
            raise ValueError("projection scale must be positive")
        au = au.copy()
        gz = gz.copy()
        for arr in (tmpl, au, gz):
            arr.setflags(write=False)
        object.__setattr__(self, "template", tmpl)
        object.__setattr__(self, "au_bases", au)
        object.__setattr__(self, "gaze_bases", gz)
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "principal_point", (float(self.principal_point[0]), float(self.principal_point[1])))

    @property
    def centroid(self) -> np.ndarray:
        return self.template.mean(axis=0)


def _face_depth(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # gentle convexity toward the camera; symmetric in x
    return 0.05 - 0.25 * x**2 - 0.10 * (y - 0.02) ** 2


def _left_eye_points() -> dict[str, np.ndarray]:
    cx = -_EYE_HALF_SPAN
    theta_u = np.pi * np.arange(8) / 7.0
    upper = np.stack(
        [cx + 0.07 * np.cos(theta_u), 0.035 * np.sin(theta_u), np.zeros(8)], axis=1
    )
    theta_l = np.pi * (np.arange(8) + 0.5) / 8.0
    lower = np.stack(
        [cx + 0.07 * np.cos(theta_l), -0.030 * np.sin(theta_l), np.zeros(8)], axis=1
    )
    iris = np.array(
        [
            [cx + 0.028, 0.0, 0.008],
            [cx, 0.028, 0.008],
            [cx - 0.028, 0.0, 0.008],
            [cx, -0.028, 0.008],
        ]
    )
    pupil = np.array([[cx, 0.0, 0.012]])
    t = np.linspace(0.0, 1.0, 10)
    brow = np.stack(
        [cx + 0.095 - 0.200 * t, 0.105 + 0.035 * np.sin(np.pi * (0.05 + 0.9 * t)), np.full(10, 0.015)],
        axis=1,
    )
    for arr in (upper, lower, iris, pupil, brow):
        arr[:, 2] += _face_depth(arr[:, 0], arr[:, 1])
    return {"upper": upper, "lower": lower, "iris": iris, "pupil": pupil, "brow": brow}


def _assemble_template() -> np.ndarray:
    left = _left_eye_points()
    pts = np.zeros((N_POINTS, 3))
    pts[list(LEFT_UPPER_LID)] = left["upper"]
    pts[list(LEFT_LOWER_LID)] = left["lower"]
    pts[list(LEFT_IRIS)] = left["iris"]
    pts[LEFT_PUPIL] = left["pupil"][0]
    pts[list(LEFT_BROW)] = left["brow"]
    # right side is the exact mirror of the left; fill via the permutation
    mirrored = pts[MIRROR_PERMUTATION].copy()
    mirrored[:, 0] = -mirrored[:, 0]
    right_ids = list(RIGHT_EYE_BLOCK) + list(RIGHT_BROW)
    pts[right_ids] = mirrored[right_ids]
    return pts


def _brow_profile_inner(t: np.ndarray) -> np.ndarray:
    return (1.0 - t) ** 2


def _brow_profile_outer(t: np.ndarray) -> np.ndarray:
    return t**2


def _brow_profile_lower(t: np.ndarray) -> np.ndarray:
    return 0.6 + 0.4 * (1.0 - t)


def _build_au_bases() -> np.ndarray:
    bases = np.zeros((N_AU, N_POINTS, 3))
    t = np.linspace(0.0, 1.0, 10)  # brow parameter, inner -> outer
    sin_u = np.sin(np.pi * np.arange(8) / 7.0)
    sin_l = np.sin(np.pi * (np.arange(8) + 0.5) / 8.0)

    def left_basis(name: str) -> np.ndarray:
        b = np.zeros((N_POINTS, 3))
        if name == "AU2":
            b[list(LEFT_BROW), 1] = 0.032 * _brow_profile_outer(t)
        elif name == "AU4":
            w = _brow_profile_lower(t)
            b[list(LEFT_BROW), 1] = -0.028 * w
            b[list(LEFT_BROW), 0] = 0.008 * w  # toward the midline for the left side
        elif name == "AU5":
            b[list(LEFT_UPPER_LID), 1] = 0.022 * sin_u
        elif name == "AU43":
            b[list(LEFT_UPPER_LID), 1] = -0.055 * sin_u
            b[list(LEFT_LOWER_LID), 1] = 0.008 * sin_l
        else:
            raise ValueError(name)
        return b

    def mirrored(b: np.ndarray) -> np.ndarray:
        m = b[MIRROR_PERMUTATION].copy()
        m[:, 0] = -m[:, 0]
        return m

    # AU1: bilateral inner-brow raise
    au1 = np.zeros((N_POINTS, 3))
    au1[list(LEFT_BROW), 1] = 0.030 * _brow_profile_inner(t)
    bases[channel_index("AU1")] = au1 + mirrored(au1)
    for au in ("AU2", "AU4", "AU5", "AU43"):
        left = left_basis(au)
        bases[channel_index(f"{au}_L")] = left
        bases[channel_index(f"{au}_R")] = mirrored(left)
    # AU7: bilateral lid tightener; squared profile keeps it independent of
    # the AU5/AU43 lid fields
    au7 = np.zeros((N_POINTS, 3))
    au7[list(LEFT_UPPER_LID), 1] = -0.007 * sin_u**2
    au7[list(LEFT_LOWER_LID), 1] = 0.012 * sin_l**2
    bases[channel_index("AU7")] = au7 + mirrored(au7)
    # snap float dust (sin(pi) etc.) so untouched points are exactly rigid
    bases[np.abs(bases) < 1e-12] = 0.0
    return bases


def _build_gaze_bases() -> np.ndarray:
    bases = np.zeros((N_GAZE, N_POINTS, 3))
    ids = list(GAZE_POINT_INDICES)
    step_h, step_v = 0.035, 0.022
    bases[GAZE_NAMES.index("gaze_left"), ids, 0] = -step_h
    bases[GAZE_NAMES.index("gaze_right"), ids, 0] = step_h
    bases[GAZE_NAMES.index("gaze_up"), ids, 1] = step_v
    bases[GAZE_NAMES.index("gaze_down"), ids, 1] = -step_v
    return bases


_DEFAULT_MODEL: DeformationModel | None = None


def default_model() -> DeformationModel:
    """The built-in canonical model; constructed once, deterministic."""
    global _DEFAULT_MODEL
    if _DEFAULT_MODEL is None:
        _DEFAULT_MODEL = DeformationModel(
            template=_assemble_template(),
            au_bases=_build_au_bases(),
            gaze_bases=_build_gaze_bases(),
            scale=1.0,
            principal_point=(0.5, 0.5),
        )
    return _DEFAULT_MODEL


def rotation_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Head rotation R = Rz(roll) @ Rx(-pitch) @ Ry(yaw), angles in degrees.

    Intrinsic z-x-y composition in a y-up frame with the camera looking down
    -z.  yaw=90 maps +z to +x; roll=90 maps +x to +y; positive pitch raises
    the face (+z toward +y), so a lowering head has negative pitch.
    """
    y, p, r = np.deg2rad([yaw, pitch, roll])
    cy, sy = np.cos(y), np.sin(y)
    cp, sp = np.cos(p), np.sin(p)
    cr, sr = np.cos(r), np.sin(r)
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, sp], [0.0, -sp, cp]])
    rz = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return rz @ rx @ ry


def euler_from_rotation(R: np.ndarray) -> tuple[float, float, float]:
    """Recover (yaw, pitch, roll) in degrees from a rotation_matrix() product.

    Valid away from pitch = +-90 deg, far outside the legal head range.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise ValueError(f"expected 3x3 rotation, got {R.shape}")
    pitch = np.arcsin(np.clip(-R[2, 1], -1.0, 1.0))
    yaw = np.arctan2(-R[2, 0], R[2, 2])
    roll = np.arctan2(-R[0, 1], R[1, 1])
    return tuple(np.rad2deg([yaw, pitch, roll]))


def deform(state: ControlState, model: DeformationModel) -> np.ndarray:
    """Template plus AU and gaze displacements, before any rigid motion."""
    disp = np.tensordot(state.au, model.au_bases, axes=1)
    disp += np.tensordot(state.gaze, model.gaze_bases, axes=1)
    return model.template + disp


def _project(points3d: np.ndarray, model: DeformationModel) -> np.ndarray:
    ppx, ppy = model.principal_point
    out = np.empty(points3d.shape[:-1] + (2,))
    out[..., 0] = ppx + model.scale * points3d[..., 0]
    out[..., 1] = ppy - model.scale * points3d[..., 1]  # image y grows downward
    return out


def map_frame(
    state: ControlState, model: DeformationModel | None = None, validate: bool = True
) -> tuple[KeypointFrame, np.ndarray]:
    """Map one control state to (projected 2-D frame, rotated 3-D points).

    Deformation is applied in the canonical frame, then the head rotation
    about the template centroid, then weak-perspective projection.
    """
    model = model or default_model()
    if validate:
        report = validate_control_state(state)
        if not report.ok:
            msgs = "; ".join(v.message for v in report.violations)
            raise ValueError(f"invalid control state: {msgs}")
    pre = deform(state, model)
    R = rotation_matrix(*state.head)
    c = model.centroid
    rotated = (pre - c) @ R.T + c
    return KeypointFrame(_project(rotated, model)), rotated


def map_sequence(
    seq: ControlSequence, model: DeformationModel | None = None, validate: bool = True
) -> tuple[KeypointSequence, KeypointSequence3D]:
    """Frame-wise map_frame over a sequence; fps is carried through."""
    model = model or default_model()
    frames2d = np.empty((len(seq), N_POINTS, 2))
    frames3d = np.empty((len(seq), N_POINTS, 3))
    for tdx in range(len(seq)):
        try:
            frame, rotated = map_frame(seq.frame(tdx), model, validate=validate)
        except ValueError as exc:
            raise ValueError(f"frame {tdx + 1}: {exc}") from exc
        frames2d[tdx] = frame.points
        frames3d[tdx] = rotated
    return KeypointSequence(frames2d, seq.fps), KeypointSequence3D(frames3d, seq.fps)


def save_keypoints_json(seq: KeypointSequence | KeypointSequence3D, path: str | Path) -> None:
    """Serialize keypoints with fps and the layout id; 2-D or 3-D by type."""
    payload = {
        "fps": float(seq.fps),
        "layout": KEYPOINT_LAYOUT,
        "frames": [[[float(c) for c in pt] for pt in frame] for frame in seq.frames],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_keypoints_json(path: str | Path) -> KeypointSequence | KeypointSequence3D:
    """Load a keypoint JSON; returns the 3-D type when frames carry z."""
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed keypoint file {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise ValueError(f"{path}: keypoint payload must be an object")
    if payload.get("layout") != KEYPOINT_LAYOUT:
        raise ValueError(f"{path}: unsupported layout {payload.get('layout')!r}")
    if "fps" not in payload or "frames" not in payload:
        raise ValueError(f"{path}: missing fps or frames")
    frames = np.asarray(payload["frames"], dtype=np.float64)
    if frames.ndim != 3 or frames.shape[1] != N_POINTS or frames.shape[2] not in (2, 3):
        raise ValueError(f"{path}: frames must have shape (T, {N_POINTS}, 2|3), got {frames.shape}")
    fps = float(payload["fps"])
    if frames.shape[2] == 2:
        return KeypointSequence(frames, fps)
    return KeypointSequence3D(frames, fps)
