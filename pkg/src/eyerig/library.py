"""Prototype store: summary-indexed retrieval and keypoint-to-control inversion."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import nnls

from .channels import (
    DEFAULT_HEAD_RANGES,
    GAZE_NAMES,
    HEAD_NAMES,
    HEAD_SLICE,
    N_AU,
    N_CHANNELS,
    N_GAZE,
    ChannelSummary,
    ControlSequence,
    channel_summary,
)
from .mapper import (
    GAZE_POINT_INDICES,
    MIRROR_PERMUTATION,
    N_POINTS,
    DeformationModel,
    KeypointSequence3D,
    default_model,
    euler_from_rotation,
)

__all__ = [
    "LIBRARY_FORMAT_VERSION",
    "DEFAULT_QUERY_WEIGHTS",
    "NeutralBaseline",
    "Prototype",
    "PrototypeLibrary",
    "QueryResult",
    "baseline_from_model",
    "build_library",
    "query",
    "save_library",
    "load_library",
    "invert_controls",
]

LIBRARY_FORMAT_VERSION = 1

# Channel weights for retrieval: AUs carry double weight, everything else unit.
DEFAULT_QUERY_WEIGHTS: np.ndarray = np.concatenate(
    [np.full(N_AU, 2.0), np.ones(N_GAZE), np.ones(3)]
)
DEFAULT_QUERY_WEIGHTS.setflags(write=False)

# Head channels enter the distance normalized by their range half-width so a
# degree does not swamp an intensity unit.
_HEAD_HALF_WIDTH = np.array(
    [(hi - lo) / 2.0 for lo, hi in (DEFAULT_HEAD_RANGES[n] for n in HEAD_NAMES)]
)
_CHANNEL_NORM = np.ones(N_CHANNELS)
_CHANNEL_NORM[HEAD_SLICE] = _HEAD_HALF_WIDTH
_CHANNEL_NORM.setflags(write=False)


@dataclass(frozen=True)
class NeutralBaseline:
    """Rest-expression keypoint geometry for one identity, 62 x 3."""

    points: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.points, dtype=np.float64)
        if arr.shape != (N_POINTS, 3):
            raise ValueError(f"baseline must have shape ({N_POINTS}, 3), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("baseline contains non-finite values")
        mirrored = arr[MIRROR_PERMUTATION].copy()
        mirrored[:, 0] = -mirrored[:, 0]
        if np.max(np.abs(arr - mirrored)) > 1e-6:
            raise ValueError("baseline is not bilaterally symmetric about the midline")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)


def baseline_from_model(model: DeformationModel | None = None) -> NeutralBaseline:
    return NeutralBaseline((model or default_model()).template)


@dataclass(frozen=True)
class Prototype:
    """One stored behavior snippet: label, controls, matching 3-D keypoints."""

    label: str
    controls: ControlSequence
    keypoints: KeypointSequence3D
    summary: ChannelSummary = field(compare=False, default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if not self.label:
            raise ValueError("prototype label must be non-empty")
        if len(self.controls) != len(self.keypoints):
            raise ValueError(
                f"prototype '{self.label}': controls ({len(self.controls)} frames) and "
                f"keypoints ({len(self.keypoints)} frames) disagree"
            )
        if self.summary is None:
            object.__setattr__(self, "summary", channel_summary(self.controls))


@dataclass(frozen=True)
class PrototypeLibrary:
    """Immutable prototype collection with a label index and stacked summaries."""

    prototypes: tuple[Prototype, ...]
    by_label: dict[str, tuple[int, ...]] = field(default_factory=dict, compare=False)
    _means: np.ndarray = field(default=None, compare=False, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        protos = tuple(self.prototypes)
        index: dict[str, list[int]] = {}
        for i, p in enumerate(protos):
            index.setdefault(p.label, []).append(i)
        means = (
            np.stack([p.summary.mean for p in protos])
            if protos
            else np.zeros((0, N_CHANNELS))
        )
        means.setflags(write=False)
        object.__setattr__(self, "prototypes", protos)
        object.__setattr__(self, "by_label", {k: tuple(v) for k, v in index.items()})
        object.__setattr__(self, "_means", means)

    def __len__(self) -> int:
        return len(self.prototypes)

    def labels(self) -> tuple[str, ...]:
        return tuple(sorted(self.by_label))


@dataclass(frozen=True)
class QueryResult:
    prototype_id: int
    distance: float
    label: str


def build_library(records: Iterable[tuple[str, ControlSequence, KeypointSequence3D]]) -> PrototypeLibrary:
    """Assemble prototypes from (label, controls, keypoints) records.

    Per-prototype length agreement is checked by the Prototype constructor;
    summaries are computed here and cached for retrieval.
    """
    protos = [Prototype(label, controls, keypoints) for label, controls, keypoints in records]
    return PrototypeLibrary(tuple(protos))


def query(
    lib: PrototypeLibrary,
    target: np.ndarray | Sequence[float],
    weights: np.ndarray | Sequence[float] | None = None,
    label_filter: str | None = None,
    k: int = 1,
) -> list[QueryResult]:
    """Top-k prototypes by weighted L1 distance between target and summary means.

    Distance is sum_j w_j |q_j - mean_j| with head channels normalized by
    their range half-width.  Ties break toward the lower prototype id.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = np.asarray(target, dtype=np.float64)
    if q.shape != (N_CHANNELS,):
        raise ValueError(f"target must have shape ({N_CHANNELS},), got {q.shape}")
    w = (
        np.array(DEFAULT_QUERY_WEIGHTS)
        if weights is None
        else np.asarray(weights, dtype=np.float64)
    )
    if w.shape != (N_CHANNELS,):
        raise ValueError(f"weights must have shape ({N_CHANNELS},), got {w.shape}")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")

    if label_filter is not None:
        ids = np.asarray(lib.by_label.get(label_filter, ()), dtype=np.intp)
    else:
        ids = np.arange(len(lib), dtype=np.intp)
    if ids.size == 0:
        return []
    diffs = np.abs(q[None, :] - lib._means[ids]) / _CHANNEL_NORM[None, :]
    dists = diffs @ w
    order = np.lexsort((ids, dists))[: min(k, ids.size)]
    return [
        QueryResult(int(ids[i]), float(dists[i]), lib.prototypes[int(ids[i])].label)
        for i in order
    ]


def save_library(lib: PrototypeLibrary, path: str | Path) -> None:
    """Write the library JSON; floats round-trip bit-exact via repr."""
    payload = {
        "version": LIBRARY_FORMAT_VERSION,
        "prototypes": [
            {
                "label": p.label,
                "fps": float(p.controls.fps),
                "controls": [[float(v) for v in row] for row in p.controls.values],
                "keypoints": [
                    [[float(c) for c in pt] for pt in frame] for frame in p.keypoints.frames
                ],
            }
            for p in lib.prototypes
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_library(path: str | Path) -> PrototypeLibrary:
    """Read a library JSON; summaries are recomputed, never trusted from disk."""
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed library file {path}: {exc}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise ValueError(f"malformed library file {path}: missing version")
    if payload["version"] != LIBRARY_FORMAT_VERSION:
        raise ValueError(f"unsupported library version {payload['version']!r}")
    entries = payload.get("prototypes")
    if not isinstance(entries, list):
        raise ValueError(f"malformed library file {path}: prototypes must be a list")
    records = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ValueError(f"malformed library file {path}: prototypes[{i}] not an object")
        try:
            label = entry["label"]
            fps = float(entry["fps"])
            controls = ControlSequence(np.asarray(entry["controls"], dtype=np.float64), fps)
            keypoints = KeypointSequence3D(np.asarray(entry["keypoints"], dtype=np.float64), fps)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed library file {path}: prototypes[{i}]: {exc}") from exc
        records.append((label, controls, keypoints))
    return build_library(records)


def _kabsch(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Rotation R minimizing ||target - R @ source|| over proper rotations.

    Points are rows, already referenced to the rotation center; no centering
    or scaling here.
    """
    H = source.T @ target
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d])
    return Vt.T @ D @ U.T


def _anchor_points(model: DeformationModel) -> np.ndarray:
    """Indices of points no AU or gaze basis ever displaces.

    Such points move rigidly with the head, so aligning them alone recovers
    the rotation without deformation cross-talk.  Needs a well-spread set to
    be usable; callers fall back to all-point alignment otherwise.
    """
    moved = np.abs(model.au_bases).sum(axis=(0, 2)) + np.abs(model.gaze_bases).sum(axis=(0, 2))
    ids = np.where(moved == 0.0)[0]
    if ids.size < 3:
        return np.empty(0, dtype=np.intp)
    spread = model.template[ids] - model.template[ids].mean(axis=0)
    sv = np.linalg.svd(spread, compute_uv=False)
    if sv[1] < 1e-6:  # collinear anchors cannot fix a rotation
        return np.empty(0, dtype=np.intp)
    return ids.astype(np.intp)


# Pre-computed index sets for the inversion's two residual sub-problems.
_GAZE_IDS = np.asarray(GAZE_POINT_INDICES, dtype=np.intp)
_SHAPE_IDS = np.asarray(
    [i for i in range(N_POINTS) if i not in set(GAZE_POINT_INDICES)], dtype=np.intp
)


def invert_controls(
    keypoints: KeypointSequence3D,
    baseline: NeutralBaseline,
    model: DeformationModel | None = None,
    max_iter: int = 200,
    tol: float = 1e-12,
) -> ControlSequence:
    """Recover per-frame control vectors from 3-D keypoints.

    Per frame, alternates (a) rigid-rotation estimation against the deformed
    baseline, (b) non-negative least squares of the de-rotated lid/brow
    residual onto the AU bases, and (c) gaze readout from the mean iris/pupil
    residual, until the recovered vector stabilizes.  Extreme head poses
    contract slowly, hence the generous iteration cap.  Degenerate or
    non-convergent frames raise with their frame index.
    """
    model = model or default_model()
    base = baseline.points
    c = base.mean(axis=0)
    base_c = base - c

    # Flattened AU design matrix over lid/brow points only; gaze never leaks in.
    A = model.au_bases[:, _SHAPE_IDS, :].reshape(N_AU, -1).T
    if np.linalg.matrix_rank(A) < N_AU:
        raise ValueError("AU bases are rank-deficient over lid/brow points")
    # Reduce the tall LS problem once: argmin ||Ax - b|| == argmin ||Rx - Q^T b||.
    Q, Rqr = np.linalg.qr(A)
    pinv = np.linalg.pinv(A)
    gaze_step = np.array(
        [model.gaze_bases[i, _GAZE_IDS, :].mean(axis=0) for i in range(N_GAZE)]
    )  # (4, 3) mean displacement per unit magnitude
    h_step = abs(gaze_step[GAZE_NAMES.index("gaze_right"), 0])
    v_step = abs(gaze_step[GAZE_NAMES.index("gaze_up"), 1])
    if h_step <= 0 or v_step <= 0:
        raise ValueError("gaze bases have no horizontal/vertical support")

    anchors = _anchor_points(model)
    out = np.zeros((len(keypoints), N_CHANNELS))
    for t in range(len(keypoints)):
        obs = keypoints.frames[t]
        obs_c = obs - c
        if np.linalg.norm(obs_c - obs_c.mean(axis=0), ord="fro") < 1e-9:
            raise ValueError(f"frame {t + 1}: degenerate keypoint configuration")
        vec = np.zeros(N_CHANNELS)
        # Rotation seed: rigid anchor points when the model has them, else a
        # crude all-point alignment that the loop refines.
        if anchors.size:
            R = _kabsch(base_c[anchors], obs_c[anchors])
        else:
            R = _kabsch(base_c, obs_c)
        converged = False
        for _ in range(max_iter):
            derot = obs_c @ R + c  # R.T applied to rows
            residual = derot - base
            b = residual[_SHAPE_IDS].reshape(-1)
            au = pinv @ b
            if np.any(au < 0.0):
                au, _ = nnls(Rqr, Q.T @ b)
            au = np.clip(au, 0.0, 1.0)
            g = residual[_GAZE_IDS].mean(axis=0)
            gaze = np.clip(
                [
                    max(-g[0], 0.0) / h_step,  # gaze_left
                    max(g[0], 0.0) / h_step,  # gaze_right
                    max(g[1], 0.0) / v_step,  # gaze_up
                    max(-g[1], 0.0) / v_step,  # gaze_down
                ],
                0.0,
                1.0,
            )
            yaw, pitch, roll = euler_from_rotation(R)
            new_vec = np.concatenate([au, gaze, [yaw, pitch, roll]])
            if np.max(np.abs(new_vec - vec)) < tol:
                vec = new_vec
                converged = True
                break
            vec = new_vec
            disp = np.tensordot(au, model.au_bases, axes=1)
            disp += np.tensordot(gaze, model.gaze_bases, axes=1)
            R = _kabsch(base_c + disp, obs_c)
        if not converged:
            raise ValueError(f"frame {t + 1}: control inversion did not converge")
        out[t] = vec
    return ControlSequence(out, keypoints.fps)
