"""Fixed 17-channel control space: activation units, gaze magnitudes, head pose."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "AU_NAMES",
    "GAZE_NAMES",
    "HEAD_NAMES",
    "CHANNEL_NAMES",
    "N_AU",
    "N_GAZE",
    "N_HEAD",
    "N_CHANNELS",
    "AU_SLICE",
    "GAZE_SLICE",
    "HEAD_SLICE",
    "DEFAULT_HEAD_RANGES",
    "OPPOSING_GAZE_PAIRS",
    "LID_CONFLICT_PAIRS",
    "ControlState",
    "ControlSequence",
    "ChannelSummary",
    "Violation",
    "ValidationReport",
    "channel_index",
    "validate_control_state",
    "validate_sequence",
    "channel_summary",
    "resample_sequence",
    "enforce_state_invariants",
    "mirror_control_vector",
    "save_controls_csv",
    "load_controls_csv",
]

# Channel roster. Order is part of the file format; never reorder.
AU_NAMES: tuple[str, ...] = (
    "AU1",
    "AU2_L",
    "AU2_R",
    "AU4_L",
    "AU4_R",
    "AU5_L",
    "AU5_R",
    "AU7",
    "AU43_L",
    "AU43_R",
)
GAZE_NAMES: tuple[str, ...] = ("gaze_left", "gaze_right", "gaze_up", "gaze_down")
HEAD_NAMES: tuple[str, ...] = ("yaw", "pitch", "roll")
CHANNEL_NAMES: tuple[str, ...] = AU_NAMES + GAZE_NAMES + HEAD_NAMES

N_AU = len(AU_NAMES)
N_GAZE = len(GAZE_NAMES)
N_HEAD = len(HEAD_NAMES)
N_CHANNELS = len(CHANNEL_NAMES)

AU_SLICE = slice(0, N_AU)
GAZE_SLICE = slice(N_AU, N_AU + N_GAZE)
HEAD_SLICE = slice(N_AU + N_GAZE, N_CHANNELS)

# Head angles are degrees; everything else is unitless intensity in [0, 1].
DEFAULT_HEAD_RANGES: dict[str, tuple[float, float]] = {
    "yaw": (-90.0, 90.0),
    "pitch": (-60.0, 60.0),
    "roll": (-45.0, 45.0),
}

# Antagonist gaze channels: at most one of each pair may be active per frame.
OPPOSING_GAZE_PAIRS: tuple[tuple[str, str], ...] = (
    ("gaze_left", "gaze_right"),
    ("gaze_up", "gaze_down"),
)

# Upper-lid raise and lid closure on the same side cannot both exceed this.
LID_CONFLICT_PAIRS: tuple[tuple[str, str], ...] = (("AU5_L", "AU43_L"), ("AU5_R", "AU43_R"))
LID_CONFLICT_LIMIT = 0.5

_INDEX: dict[str, int] = {name: i for i, name in enumerate(CHANNEL_NAMES)}

# L/R channel swaps under a bilateral mirror; yaw and roll flip sign, pitch is even.
_MIRROR_SWAPS: tuple[tuple[str, str], ...] = (
    ("AU2_L", "AU2_R"),
    ("AU4_L", "AU4_R"),
    ("AU5_L", "AU5_R"),
    ("AU43_L", "AU43_R"),
    ("gaze_left", "gaze_right"),
)
_MIRROR_NEGATE: tuple[str, ...] = ("yaw", "roll")

CSV_HEADER: tuple[str, ...] = ("frame",) + CHANNEL_NAMES
CSV_FORMAT_VERSION = 1


def channel_index(name: str) -> int:
    """Position of a channel in the 17-vector; raises KeyError for unknown names."""
    return _INDEX[name]


def _as_float_array(values: Iterable[float], n: int, what: str) -> np.ndarray:
    arr = np.asarray(tuple(values) if not isinstance(values, np.ndarray) else values, dtype=np.float64)
    if arr.shape != (n,):
        raise ValueError(f"{what} must have shape ({n},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    return arr


@dataclass(frozen=True)
class ControlState:
    """One frame of the 17-channel control vector, split by channel family."""

    au: np.ndarray
    gaze: np.ndarray
    head: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "au", _as_float_array(self.au, N_AU, "au"))
        object.__setattr__(self, "gaze", _as_float_array(self.gaze, N_GAZE, "gaze"))
        object.__setattr__(self, "head", _as_float_array(self.head, N_HEAD, "head"))
        for arr in (self.au, self.gaze, self.head):
            arr.setflags(write=False)

    @classmethod
    def zero(cls) -> "ControlState":
        return cls(np.zeros(N_AU), np.zeros(N_GAZE), np.zeros(N_HEAD))

    @classmethod
    def from_vector(cls, vec: np.ndarray | Sequence[float]) -> "ControlState":
        v = _as_float_array(vec, N_CHANNELS, "control vector")
        return cls(v[AU_SLICE], v[GAZE_SLICE], v[HEAD_SLICE])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.au, self.gaze, self.head])

    def __getitem__(self, name: str) -> float:
        return float(self.as_vector()[channel_index(name)])


@dataclass(frozen=True)
class ControlSequence:
    """A fixed-rate sequence of control vectors, shape (frames, 17)."""

    values: np.ndarray
    fps: float

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != N_CHANNELS:
            raise ValueError(f"control sequence must have shape (T, {N_CHANNELS}), got {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("control sequence must contain at least one frame")
        if not np.all(np.isfinite(arr)):
            raise ValueError("control sequence contains non-finite values")
        if not (isinstance(self.fps, (int, float)) and self.fps > 0):
            raise ValueError(f"fps must be positive, got {self.fps!r}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "fps", float(self.fps))

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def duration_seconds(self) -> float:
        return len(self) / self.fps

    def frame(self, index: int) -> ControlState:
        return ControlState.from_vector(self.values[index])

    def channel(self, name: str) -> np.ndarray:
        return self.values[:, channel_index(name)]

    def with_values(self, values: np.ndarray) -> "ControlSequence":
        return ControlSequence(values, self.fps)


@dataclass(frozen=True)
class ChannelSummary:
    """Per-channel mean/max/min over a sequence; the retrieval feature vector."""

    mean: np.ndarray
    max: np.ndarray
    min: np.ndarray

    def __post_init__(self) -> None:
        for name in ("mean", "max", "min"):
            object.__setattr__(self, name, _as_float_array(getattr(self, name), N_CHANNELS, name))
            getattr(self, name).setflags(write=False)
        if not (np.all(self.min <= self.mean + 1e-12) and np.all(self.mean <= self.max + 1e-12)):
            raise ValueError("channel summary violates min <= mean <= max")


@dataclass(frozen=True)
class Violation:
    """One rule failure: where, which channel, which rule, human-readable why."""

    rule: str
    channel: str
    message: str
    frame: int | None = None


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def extend(self, other: "ValidationReport") -> None:
        self.violations.extend(other.violations)


def validate_control_state(
    state: ControlState,
    head_ranges: Mapping[str, tuple[float, float]] | None = None,
    frame: int | None = None,
) -> ValidationReport:
    """Check one frame against range and co-activation constraints.

    Rules reported: au_range, gaze_range, head_range, gaze_opposition,
    lid_conflict.  The report lists every failure, not just the first.
    """
    ranges = dict(DEFAULT_HEAD_RANGES)
    if head_ranges:
        ranges.update(head_ranges)
    report = ValidationReport()

    for i, name in enumerate(AU_NAMES):
        v = state.au[i]
        if not (0.0 <= v <= 1.0):
            report.violations.append(
                Violation("au_range", name, f"{name}={v:.4g} outside [0, 1]", frame)
            )
    for i, name in enumerate(GAZE_NAMES):
        v = state.gaze[i]
        if not (0.0 <= v <= 1.0):
            report.violations.append(
                Violation("gaze_range", name, f"{name}={v:.4g} outside [0, 1]", frame)
            )
    for i, name in enumerate(HEAD_NAMES):
        lo, hi = ranges[name]
        v = state.head[i]
        if not (lo <= v <= hi):
            report.violations.append(
                Violation("head_range", name, f"{name}={v:.4g} outside [{lo:g}, {hi:g}] deg", frame)
            )
    for a, b in OPPOSING_GAZE_PAIRS:
        va = state.gaze[channel_index(a) - N_AU]
        vb = state.gaze[channel_index(b) - N_AU]
        if va > 0.0 and vb > 0.0:
            report.violations.append(
                Violation(
                    "gaze_opposition",
                    a,
                    f"opposing gaze channels {a}={va:.4g} and {b}={vb:.4g} both active",
                    frame,
                )
            )
    for raise_name, close_name in LID_CONFLICT_PAIRS:
        vr = state.au[channel_index(raise_name)]
        vc = state.au[channel_index(close_name)]
        if vr > LID_CONFLICT_LIMIT and vc > LID_CONFLICT_LIMIT:
            report.violations.append(
                Violation(
                    "lid_conflict",
                    raise_name,
                    f"{raise_name}={vr:.4g} and {close_name}={vc:.4g} both exceed {LID_CONFLICT_LIMIT}",
                    frame,
                )
            )
    return report


def validate_sequence(
    seq: ControlSequence, head_ranges: Mapping[str, tuple[float, float]] | None = None
) -> ValidationReport:
    """Frame-wise validate_control_state over a whole sequence; frames are 1-based."""
    report = ValidationReport()
    for t in range(len(seq)):
        report.extend(validate_control_state(seq.frame(t), head_ranges, frame=t + 1))
    return report


def channel_summary(seq: ControlSequence) -> ChannelSummary:
    return ChannelSummary(
        mean=seq.values.mean(axis=0), max=seq.values.max(axis=0), min=seq.values.min(axis=0)
    )


def resample_sequence(seq: ControlSequence, target_len: int) -> ControlSequence:
    """Linearly resample to target_len frames, preserving both endpoints.

    AU and gaze channels are clamped back into [0, 1] after interpolation;
    head angles are interpolated untouched.  Resampling to the same length
    returns the sequence unchanged.
    """
    if target_len < 1:
        raise ValueError(f"target_len must be >= 1, got {target_len}")
    n = len(seq)
    if target_len == n:
        return seq
    if n == 1:
        values = np.repeat(seq.values, target_len, axis=0)
        return ControlSequence(values, seq.fps)
    src = np.linspace(0.0, 1.0, n)
    dst = np.linspace(0.0, 1.0, target_len)
    out = np.empty((target_len, N_CHANNELS))
    for j in range(N_CHANNELS):
        out[:, j] = np.interp(dst, src, seq.values[:, j])
    out[:, AU_SLICE] = np.clip(out[:, AU_SLICE], 0.0, 1.0)
    out[:, GAZE_SLICE] = np.clip(out[:, GAZE_SLICE], 0.0, 1.0)
    return ControlSequence(out, seq.fps)


def enforce_state_invariants(
    values: np.ndarray, head_ranges: Mapping[str, tuple[float, float]] | None = None
) -> np.ndarray:
    """Project raw (T, 17) values onto the valid set; returns a new array.

    Clamps ranges, resolves opposing-gaze co-activation by keeping the net
    direction, and caps the weaker side of an AU5/AU43 conflict at 0.5.
    Already-valid input comes back unchanged (idempotent).
    """
    ranges = dict(DEFAULT_HEAD_RANGES)
    if head_ranges:
        ranges.update(head_ranges)
    out = np.array(values, dtype=np.float64, copy=True)
    if out.ndim != 2 or out.shape[1] != N_CHANNELS:
        raise ValueError(f"expected (T, {N_CHANNELS}) values, got {out.shape}")
    out[:, AU_SLICE] = np.clip(out[:, AU_SLICE], 0.0, 1.0)
    out[:, GAZE_SLICE] = np.clip(out[:, GAZE_SLICE], 0.0, 1.0)
    for name in HEAD_NAMES:
        j = channel_index(name)
        lo, hi = ranges[name]
        out[:, j] = np.clip(out[:, j], lo, hi)
    for a, b in OPPOSING_GAZE_PAIRS:
        ja, jb = channel_index(a), channel_index(b)
        both = (out[:, ja] > 0.0) & (out[:, jb] > 0.0)
        if np.any(both):
            net = out[both, ja] - out[both, jb]
            out[both, ja] = np.maximum(net, 0.0)
            out[both, jb] = np.maximum(-net, 0.0)
    for side in ("L", "R"):
        jr, jc = channel_index(f"AU5_{side}"), channel_index(f"AU43_{side}")
        both = (out[:, jr] > LID_CONFLICT_LIMIT) & (out[:, jc] > LID_CONFLICT_LIMIT)
        if np.any(both):
            # closure wins ties: the raise channel is the one capped
            cap_raise = out[both, jr] <= out[both, jc]
            rows = np.where(both)[0]
            out[rows[cap_raise], jr] = LID_CONFLICT_LIMIT
            out[rows[~cap_raise], jc] = LID_CONFLICT_LIMIT
    return out


def mirror_control_vector(vec: np.ndarray) -> np.ndarray:
    """Bilateral mirror of a control vector or (T, 17) array.

    Swaps L/R channel pairs, swaps gaze_left/gaze_right, negates yaw and roll.
    """
    arr = np.asarray(vec, dtype=np.float64)
    out = arr.copy()
    for a, b in _MIRROR_SWAPS:
        ia, ib = channel_index(a), channel_index(b)
        out[..., ia], out[..., ib] = arr[..., ib].copy(), arr[..., ia].copy()
    for name in _MIRROR_NEGATE:
        out[..., channel_index(name)] = -out[..., channel_index(name)]
    return out


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".meta.json") if path.suffix == ".csv" else Path(str(path) + ".meta.json")


def save_controls_csv(seq: ControlSequence, path: str | Path) -> None:
    """Write one row per frame plus a sidecar metadata JSON carrying fps."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for t in range(len(seq)):
            writer.writerow([t + 1] + [repr(float(v)) for v in seq.values[t]])
    meta = {"fps": float(seq.fps), "version": CSV_FORMAT_VERSION}
    with open(_sidecar_path(path), "w") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")


def load_controls_csv(path: str | Path, fps: float | None = None) -> ControlSequence:
    """Read a control CSV; fps comes from the sidecar unless overridden."""
    path = Path(path)
    if fps is None:
        sidecar = _sidecar_path(path)
        if not sidecar.exists():
            raise FileNotFoundError(
                f"missing sidecar {sidecar.name} next to {path.name} (pass fps explicitly to override)"
            )
        with open(sidecar) as fh:
            try:
                meta = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"malformed sidecar {sidecar}: {exc}") from exc
        if not isinstance(meta, dict) or "fps" not in meta:
            raise ValueError(f"sidecar {sidecar} lacks an fps field")
        if meta.get("version") != CSV_FORMAT_VERSION:
            raise ValueError(f"unsupported controls format version {meta.get('version')!r}")
        fps = float(meta["fps"])
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty controls file") from None
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise ValueError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric value ({exc})") from None
    if not rows:
        raise ValueError(f"{path}: no frames")
    return ControlSequence(np.asarray(rows), fps)
