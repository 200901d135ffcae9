"""Evaluation metrics: activation F1, warped temporal agreement, landmark error."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .channels import AU_NAMES, ControlSequence, channel_index
from .mapper import KeypointSequence, LEFT_PUPIL, RIGHT_PUPIL
from .planner import signature_aus

__all__ = [
    "dtw",
    "F1Score",
    "au_f1",
    "au_temp",
    "eye_lmd",
    "MetricConfig",
    "load_metric_config",
]


def dtw(a: Sequence[float], b: Sequence[float]) -> float:
    """Dynamic time warping cost between two 1-D tracks.

    Cell cost |a_i - b_j|, moves right/down/diagonal, endpoints aligned.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError("dtw expects 1-D tracks")
    if x.size == 0 or y.size == 0:
        raise ValueError("dtw tracks must be non-empty")
    n, m = x.size, y.size
    cost = np.abs(x[:, None] - y[None, :])
    acc = np.full((n, m), np.inf)
    acc[0, 0] = cost[0, 0]
    for j in range(1, m):
        acc[0, j] = cost[0, j] + acc[0, j - 1]
    for i in range(1, n):
        acc[i, 0] = cost[i, 0] + acc[i - 1, 0]
        for j in range(1, m):
            acc[i, j] = cost[i, j] + min(
                acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1]
            )
    return float(acc[n - 1, m - 1])


@dataclass(frozen=True)
class F1Score:
    precision: float
    recall: float
    f1: float


def _as_values(seq) -> np.ndarray:
    if isinstance(seq, ControlSequence):
        return seq.values
    arr = np.asarray(seq, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 17:
        raise ValueError(f"expected a (frames, 17) control array, got {arr.shape}")
    return arr


def au_f1(
    pred,
    reference,
    threshold: float = 0.1,
    channels: Sequence[str] | None = None,
) -> F1Score:
    """Frame-wise activation agreement over AU channels.

    A cell counts as active when strictly above the threshold.  When a side
    has no active cells the corresponding ratio is 1 if the other side is
    also silent, else 0; f1 is 0 whenever precision + recall is 0.
    """
    p = _as_values(pred)
    g = _as_values(reference)
    if p.shape[0] != g.shape[0]:
        raise ValueError(
            f"sequences must have equal length, got {p.shape[0]} and {g.shape[0]}"
        )
    names = tuple(channels) if channels is not None else AU_NAMES
    idx = [channel_index(n) for n in names]
    for n in names:
        if n not in AU_NAMES:
            raise ValueError(f"{n!r} is not an AU channel")
    pa = p[:, idx] > threshold
    ga = g[:, idx] > threshold
    tp = float(np.sum(pa & ga))
    pred_pos = float(np.sum(pa))
    ref_pos = float(np.sum(ga))
    if pred_pos == 0:
        precision = 1.0 if ref_pos == 0 else 0.0
    else:
        precision = tp / pred_pos
    if ref_pos == 0:
        recall = 1.0 if pred_pos == 0 else 0.0
    else:
        recall = tp / ref_pos
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return F1Score(precision, recall, f1)


def au_temp(
    pred,
    reference,
    label: str,
    threshold: float = 0.1,
    channels: Sequence[str] | None = None,
) -> float:
    """Temporal agreement on a label's signature AUs, via per-channel warping.

    Score = 1 - mean_over_channels(dtw / reference_length), floored at 0.
    Channels default to the label's signature AU set; pass `channels` to
    override.  Lengths may differ; warping absorbs tempo changes.
    """
    p = _as_values(pred)
    g = _as_values(reference)
    names = tuple(channels) if channels is not None else signature_aus(label)
    if not names:
        raise ValueError(f"no AU channels to compare for label {label!r}")
    z = float(g.shape[0])
    costs = [dtw(p[:, channel_index(n)], g[:, channel_index(n)]) for n in names]
    return max(0.0, 1.0 - float(np.mean(costs)) / z)


def eye_lmd(pred: KeypointSequence, reference: KeypointSequence) -> float:
    """Mean landmark distance, normalized by the reference inter-pupil span.

    Per frame: mean Euclidean distance over all 62 points divided by that
    frame's reference pupil-to-pupil distance; averaged over frames.
    """
    p = pred.frames
    g = reference.frames
    if p.shape[0] != g.shape[0]:
        raise ValueError(
            f"sequences must have equal length, got {p.shape[0]} and {g.shape[0]}"
        )
    inter = np.linalg.norm(
        g[:, LEFT_PUPIL, :] - g[:, RIGHT_PUPIL, :], axis=1
    )
    if np.any(inter < 1e-9):
        raise ValueError("reference inter-pupil distance is degenerate")
    per_point = np.linalg.norm(p - g, axis=2)
    per_frame = per_point.mean(axis=1) / inter
    return float(per_frame.mean())


@dataclass(frozen=True)
class MetricConfig:
    """Evaluation settings: activation threshold and signature overrides."""

    activation_threshold: float = 0.1
    signature_override: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "signature_override",
            {k: tuple(v) for k, v in dict(self.signature_override).items()},
        )

    def channels_for(self, label: str) -> tuple[str, ...]:
        if label in self.signature_override:
            return self.signature_override[label]
        return signature_aus(label)


def load_metric_config(path: str | Path) -> MetricConfig:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ValueError(f"{path}: metric config must be an object")
    threshold = payload.get("activation_threshold", 0.1)
    if not isinstance(threshold, (int, float)) or not 0.0 <= threshold < 1.0:
        raise ValueError(f"{path}: activation_threshold must be in [0, 1)")
    override = payload.get("signature_override", {})
    if not isinstance(override, dict):
        raise ValueError(f"{path}: signature_override must be an object")
    for label, names in override.items():
        if not isinstance(names, list) or not all(
            isinstance(n, str) and n in AU_NAMES for n in names
        ):
            raise ValueError(
                f"{path}: signature_override[{label!r}] must list AU channels"
            )
    return MetricConfig(float(threshold), override)
