"""Staged-event planning: behavior labels and instructions become event plans."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .channels import (
    AU_NAMES,
    CHANNEL_NAMES,
    DEFAULT_HEAD_RANGES,
    GAZE_NAMES,
    HEAD_NAMES,
    ValidationReport,
    Violation,
    channel_index,
)

__all__ = [
    "CATEGORIES",
    "TEMPLATE_TABLE_VERSION",
    "StagedEvent",
    "Plan",
    "InstructionIntent",
    "plan",
    "validate_plan",
    "parse_instructions",
    "signature_channels",
    "signature_aus",
    "load_template_table",
    "encode_plan",
    "decode_agent_plan",
    "encode_agent_request",
]

TEMPLATE_TABLE_VERSION = 1

# Bilateral shorthand used in templates; expanded to _L/_R at plan time.
_BILATERAL = {
    "AU2": ("AU2_L", "AU2_R"),
    "AU4": ("AU4_L", "AU4_R"),
    "AU5": ("AU5_L", "AU5_R"),
    "AU43": ("AU43_L", "AU43_R"),
}

# Stage table per category: (duration ratio, semantics, targets, exemptions).
# Ratios sum to 1; targets may use bilateral shorthand.  Intervals stay inside
# channel legal ranges and gaze highs avoid uncoordinated saccades.
_TEMPLATES: dict[str, tuple[tuple[float, str, dict[str, tuple[float, float]], tuple[str, ...]], ...]] = {
    "sadness": (
        (0.15, "neutral onset", {"AU1": (0.05, 0.15)}, ()),
        (
            0.45,
            "inner brows rise as gaze lowers",
            {"AU1": (0.30, 0.60), "AU4": (0.10, 0.25), "gaze_down": (0.15, 0.35)},
            (),
        ),
        (
            0.40,
            "head droops with lowered gaze",
            {"AU1": (0.25, 0.50), "gaze_down": (0.20, 0.40), "pitch": (-10.0, -4.0)},
            (),
        ),
    ),
    "fear": (
        (0.20, "alert onset", {"AU5": (0.20, 0.40), "AU1": (0.10, 0.30)}, ()),
        (
            0.50,
            "eyes widen and brows raise",
            {"AU1": (0.40, 0.70), "AU2": (0.30, 0.60), "AU5": (0.50, 0.80)},
            (),
        ),
        (0.30, "frozen stare", {"AU5": (0.40, 0.70), "AU1": (0.30, 0.60)}, ()),
    ),
    "disgust": (
        (0.15, "onset", {"AU4": (0.10, 0.30)}, ()),
        (
            0.50,
            "brows lower and lids tighten",
            {"AU4": (0.40, 0.70), "AU7": (0.30, 0.60)},
            (),
        ),
        (
            0.35,
            "sustained squint, head turns aside",
            {"AU4": (0.30, 0.60), "AU7": (0.25, 0.50), "yaw": (6.0, 14.0)},
            (),
        ),
    ),
    "contempt": (
        (0.20, "neutral onset", {}, ()),
        (
            0.45,
            "unilateral brow raise",
            {"AU2_L": (0.30, 0.60), "roll": (2.0, 6.0)},
            (),
        ),
        (
            0.35,
            "narrowed lids with a slight head tilt",
            {"AU7": (0.20, 0.40), "AU2_L": (0.20, 0.50), "roll": (3.0, 8.0)},
            (),
        ),
    ),
    "anger": (
        (0.15, "onset", {"AU4": (0.15, 0.35)}, ()),
        (
            0.50,
            "brows lower and lids tighten",
            {"AU4": (0.50, 0.80), "AU7": (0.40, 0.70), "AU5": (0.30, 0.50)},
            (),
        ),
        (
            0.35,
            "fixed glare",
            {"AU4": (0.40, 0.70), "AU7": (0.30, 0.60), "AU5": (0.25, 0.45)},
            (),
        ),
    ),
    "surprise": (
        (0.12, "onset", {"AU1": (0.10, 0.30)}, ()),
        (
            0.38,
            "brows shoot up, eyes widen",
            {"AU1": (0.50, 0.80), "AU2": (0.50, 0.80), "AU5": (0.50, 0.80), "pitch": (2.0, 8.0)},
            (),
        ),
        (
            0.50,
            "held wide-eyed look",
            {"AU1": (0.40, 0.70), "AU2": (0.40, 0.70), "AU5": (0.40, 0.70)},
            (),
        ),
    ),
    "laughter": (
        (0.20, "smiling onset around the eyes", {"AU7": (0.20, 0.40)}, ()),
        (
            0.45,
            "eyes crease as the head rocks back",
            {"AU7": (0.50, 0.80), "AU43": (0.20, 0.45), "pitch": (3.0, 10.0)},
            (),
        ),
        (
            0.35,
            "settling with residual crease",
            {"AU7": (0.30, 0.60), "AU43": (0.10, 0.30)},
            (),
        ),
    ),
    "cognitive_effort": (
        (0.12, "attentive onset", {"AU5": (0.15, 0.35)}, ()),
        (
            0.24,
            "gaze shifts left with a mild squint",
            {
                "AU4": (0.10, 0.20),
                "AU7": (0.12, 0.25),
                "gaze_left": (0.15, 0.30),
                "gaze_up": (0.10, 0.25),
            },
            (),
        ),
        (
            0.64,
            "head lowers slightly, squint held",
            {
                "AU4": (0.05, 0.12),
                "AU7": (0.08, 0.18),
                "gaze_left": (0.25, 0.50),
                "pitch": (-12.0, -5.0),
            },
            (),
        ),
    ),
    "low_arousal_negative": (
        (0.20, "dull onset", {"AU43": (0.15, 0.30)}, ()),
        (
            0.45,
            "lids grow heavy, gaze drifts down",
            {"AU43": (0.25, 0.45), "gaze_down": (0.10, 0.30), "AU4": (0.10, 0.25)},
            (),
        ),
        (
            0.35,
            "slumped hold with a slow blink",
            {"AU43": (0.60, 0.90), "pitch": (-8.0, -3.0)},
            ("blink_duration",),
        ),
    ),
    "social_engagement": (
        (0.25, "attentive onset", {"AU5": (0.20, 0.40), "AU1": (0.10, 0.30)}, ()),
        (
            0.40,
            "brow flash with direct gaze",
            {"AU1": (0.30, 0.60), "AU2": (0.30, 0.60), "AU5": (0.25, 0.50)},
            (),
        ),
        (
            0.35,
            "engaged nod",
            {"AU5": (0.20, 0.40), "AU1": (0.20, 0.45), "pitch": (-7.0, -2.0)},
            (),
        ),
    ),
    "evasive_response": (
        (0.18, "brief direct onset", {"AU5": (0.10, 0.30)}, ()),
        (
            0.47,
            "gaze averts sideways with a head turn",
            {"gaze_left": (0.40, 0.65), "yaw": (-16.0, -6.0), "AU43": (0.10, 0.30)},
            (),
        ),
        (
            0.35,
            "averted hold drifting downward",
            {
                "gaze_left": (0.25, 0.50),
                "gaze_down": (0.10, 0.30),
                "yaw": (-14.0, -5.0),
                "pitch": (-8.0, -3.0),
            },
            (),
        ),
    ),
    "drowsiness": (
        (0.12, "eyelids droop", {"AU43": (0.25, 0.45)}, ()),
        (0.28, "prolonged blink", {"AU43": (0.65, 0.95)}, ("blink_duration",)),
        (
            0.60,
            "drowsy head nod",
            {"AU43": (0.30, 0.50), "pitch": (-12.0, -5.0)},
            (),
        ),
    ),
}

CATEGORIES: tuple[str, ...] = tuple(_TEMPLATES)

_GAZE_OPPOSITE = {"left": "right", "right": "left", "up": "down", "down": "up"}
_GAZE_ADD = (0.15, 0.30)
_HEAD_ADD = {
    "left": ("yaw", (-20.0, -8.0)),
    "right": ("yaw", (8.0, 20.0)),
    "up": ("pitch", (5.0, 12.0)),
    "down": ("pitch", (-12.0, -5.0)),
}


@dataclass(frozen=True)
class StagedEvent:
    """One plan stage: inclusive 1-based frame span, intent, and targets."""

    start_frame: int
    end_frame: int
    semantics: str
    channel_targets: dict[str, tuple[float, float]]
    exemptions: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "channel_targets", dict(self.channel_targets))
        object.__setattr__(self, "exemptions", frozenset(self.exemptions))

    @property
    def n_frames(self) -> int:
        return self.end_frame - self.start_frame + 1


@dataclass(frozen=True)
class Plan:
    """Ordered staged events covering [1, total_frames] at a fixed rate."""

    label: str
    events: tuple[StagedEvent, ...]
    total_frames: int
    fps: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "events", tuple(self.events))


@dataclass(frozen=True)
class InstructionIntent:
    """Closed-vocabulary reading of a free-text instruction string."""

    gaze: tuple[str, ...] = ()
    head: tuple[str, ...] = ()
    brow: str | None = None  # "both" | "left" | "right"
    blink: bool = False
    wink: str | None = None  # "left" | "right"

    def is_empty(self) -> bool:
        return not (self.gaze or self.head or self.brow or self.blink or self.wink)


_DIRECTIONS = ("left", "right", "up", "down")
_BROW_WORDS = ("eyebrow", "eyebrows", "brow", "brows")
_RAISE_WORDS = ("raise", "raises", "raised", "lift", "lifts", "flash")
_LOWER_WORDS = ("lower", "lowers", "lowered", "drop", "drops")


def parse_instructions(text: str) -> InstructionIntent:
    """Keyword scan over a small vocabulary; unknown words are ignored.

    Direction words bind to the nearest of eyebrow/head within a three-token
    window, otherwise to gaze.  "lower"/"raise" near "head" become pitch
    moves; near a brow word they become brow raises.
    """
    tokens = re.findall(r"[a-z]+", (text or "").lower())
    gaze: list[str] = []
    head: list[str] = []
    brow: str | None = None
    blink = False
    wink: str | None = None

    def near(i: int, words: Sequence[str], radius: int = 3) -> bool:
        lo, hi = max(0, i - radius), min(len(tokens), i + radius + 1)
        return any(tok in words for tok in tokens[lo:hi])

    # side words adjacent to "wink" belong to the wink, not to gaze
    claimed: set[int] = set()
    for i, tok in enumerate(tokens):
        if tok in ("wink", "winks", "winking"):
            if i + 1 < len(tokens) and tokens[i + 1] in ("left", "right"):
                claimed.add(i + 1)
            elif i > 0 and tokens[i - 1] in ("left", "right"):
                claimed.add(i - 1)

    for i, tok in enumerate(tokens):
        if tok in _DIRECTIONS:
            if i in claimed:
                continue
            if i + 1 < len(tokens) and tokens[i + 1] in _BROW_WORDS:
                if tok in ("left", "right"):
                    brow = tok
                continue
            if near(i, ("head", "turn", "turns", "tilt", "tilts")):
                if tok not in head:
                    head.append(tok)
            else:
                if tok not in gaze:
                    gaze.append(tok)
        elif tok in _RAISE_WORDS:
            if near(i, _BROW_WORDS) and brow is None:
                brow = "both"
            elif near(i, ("head",)) and "up" not in head:
                head.append("up")
        elif tok in _LOWER_WORDS:
            if near(i, ("head",)) and "down" not in head:
                head.append("down")
        elif tok in ("blink", "blinks", "blinking"):
            blink = True
        elif tok in ("wink", "winks", "winking"):
            side = None
            if i + 1 < len(tokens) and tokens[i + 1] in ("left", "right"):
                side = tokens[i + 1]
            elif i > 0 and tokens[i - 1] in ("left", "right"):
                side = tokens[i - 1]
            wink = side or "left"
    return InstructionIntent(tuple(gaze), tuple(head), brow, blink, wink)


def _expand_targets(raw: Mapping[str, tuple[float, float]]) -> dict[str, tuple[float, float]]:
    out: dict[str, tuple[float, float]] = {}
    for name, interval in raw.items():
        for expanded in _BILATERAL.get(name, (name,)):
            out[expanded] = (float(interval[0]), float(interval[1]))
    return out


def _allocate_frames(ratios: Sequence[float], total: int) -> list[int]:
    """Largest-remainder split of `total` frames, every stage at least one."""
    exact = [r * total for r in ratios]
    counts = [int(x) for x in exact]
    remainder = total - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    # guarantee minimum of one frame per stage, stealing from the largest
    for i in range(len(counts)):
        while counts[i] < 1:
            j = max(range(len(counts)), key=lambda k: counts[k])
            if counts[j] <= 1:
                raise ValueError("cannot allocate at least one frame per stage")
            counts[j] -= 1
            counts[i] += 1
    return counts


def _relax_interval(
    name: str, interval: tuple[float, float], amount: float
) -> tuple[float, float]:
    lo, hi = interval
    mid = (lo + hi) / 2.0
    half = (hi - lo) / 2.0 * (1.0 + amount) + 0.01 * amount
    lo2, hi2 = mid - half, mid + half
    if name in DEFAULT_HEAD_RANGES:
        lim_lo, lim_hi = DEFAULT_HEAD_RANGES[name]
    else:
        lim_lo, lim_hi = 0.0, 1.0
    return (max(lo2, lim_lo), min(hi2, lim_hi))


def _apply_intent(
    events: list[dict], intent: InstructionIntent
) -> None:
    """Fold instruction intent into mutable event dicts (targets/exemptions)."""
    if intent.is_empty():
        return
    action = min(1, len(events) - 1)
    last = len(events) - 1
    for d in intent.gaze:
        chan = f"gaze_{d}"
        opp = f"gaze_{_GAZE_OPPOSITE[d]}"
        for ev in events:
            ev["targets"].pop(opp, None)
        if not any(ev["targets"].get(chan, (0.0, 0.0))[0] > 0.0 for ev in events):
            events[action]["targets"][chan] = _GAZE_ADD
    for d in intent.head:
        chan, interval = _HEAD_ADD[d]
        sign = 1.0 if interval[0] > 0 else -1.0
        for ev in events:
            cur = ev["targets"].get(chan)
            if cur is not None and (cur[0] * sign < 0 or cur[1] * sign < 0):
                ev["targets"].pop(chan)
        if not any(
            ev["targets"].get(chan) is not None
            and ev["targets"][chan][0] * sign >= 0
            and (abs(ev["targets"][chan][0]) > 0 or abs(ev["targets"][chan][1]) > 0)
            for ev in events
        ):
            events[last]["targets"][chan] = interval
    if intent.brow is not None:
        if intent.brow == "both":
            additions = {"AU1": (0.30, 0.60), "AU2_L": (0.30, 0.60), "AU2_R": (0.30, 0.60)}
        else:
            side = "L" if intent.brow == "left" else "R"
            additions = {f"AU2_{side}": (0.40, 0.70)}
        for chan, interval in additions.items():
            if not any(chan in ev["targets"] for ev in events):
                events[action]["targets"][chan] = interval
    if intent.blink:
        if not any(
            ev["targets"].get("AU43_L", (0.0, 0.0))[1] >= 0.5
            and ev["targets"].get("AU43_R", (0.0, 0.0))[1] >= 0.5
            for ev in events
        ):
            events[action]["targets"]["AU43_L"] = (0.70, 1.00)
            events[action]["targets"]["AU43_R"] = (0.70, 1.00)
    if intent.wink is not None:
        side = "L" if intent.wink == "left" else "R"
        events[action]["targets"][f"AU43_{side}"] = (0.70, 1.00)
        events[action]["exemptions"].add("blink_asymmetry")


def plan(
    label: str,
    total_frames: int,
    fps: float,
    instructions: str = "",
    initial_pose: Sequence[float] = (0.0, 0.0, 0.0),
    relax: float = 0.0,
    templates: Mapping[str, tuple] | None = None,
) -> Plan:
    """Build the staged-event plan for a category label.

    Stage ratios come from the category template; instruction keywords add or
    strip channel targets; the first event's head targets are widened to
    contain initial_pose so the pinned first frame can always satisfy them.
    `relax` > 0 widens every target interval by that fraction (used when a
    critic escalation re-plans).  `templates` substitutes a custom stage
    table (see load_template_table) for the built-in one.
    """
    table = _TEMPLATES if templates is None else templates
    if label not in table:
        known = ", ".join(table)
        raise ValueError(f"unknown label {label!r}; expected one of: {known}")
    if total_frames < 1:
        raise ValueError(f"total_frames must be >= 1, got {total_frames}")
    if not fps > 0:
        raise ValueError(f"fps must be positive, got {fps!r}")
    pose = tuple(float(v) for v in initial_pose)
    if len(pose) != 3:
        raise ValueError("initial_pose must be (yaw, pitch, roll)")
    for name, v in zip(HEAD_NAMES, pose):
        lo, hi = DEFAULT_HEAD_RANGES[name]
        if not (lo <= v <= hi):
            raise ValueError(f"initial_pose {name}={v:g} outside [{lo:g}, {hi:g}]")

    stages = table[label]
    if total_frames < len(stages):
        merged_targets: dict[str, tuple[float, float]] = {}
        merged_exempt: set[str] = set()
        for _, _, targets, exempt in stages:
            merged_targets.update(_expand_targets(targets))
            merged_exempt.update(exempt)
        raw_events = [
            {
                "start": 1,
                "end": total_frames,
                "semantics": f"{label} (merged)",
                "targets": merged_targets,
                "exemptions": merged_exempt,
            }
        ]
    else:
        counts = _allocate_frames([s[0] for s in stages], total_frames)
        raw_events = []
        cursor = 1
        for (ratio, semantics, targets, exempt), n in zip(stages, counts):
            raw_events.append(
                {
                    "start": cursor,
                    "end": cursor + n - 1,
                    "semantics": semantics,
                    "targets": _expand_targets(targets),
                    "exemptions": set(exempt),
                }
            )
            cursor += n

    if relax > 0.0:
        for ev in raw_events:
            ev["targets"] = {
                name: _relax_interval(name, interval, relax)
                for name, interval in ev["targets"].items()
            }

    _apply_intent(raw_events, parse_instructions(instructions))

    # first event must be able to hold the pinned initial pose
    first = raw_events[0]
    for name, v in zip(HEAD_NAMES, pose):
        lim_lo, lim_hi = DEFAULT_HEAD_RANGES[name]
        cur = first["targets"].get(name)
        if cur is None:
            first["targets"][name] = (max(v - 2.0, lim_lo), min(v + 2.0, lim_hi))
        else:
            first["targets"][name] = (min(cur[0], v), max(cur[1], v))

    events = tuple(
        StagedEvent(
            start_frame=ev["start"],
            end_frame=ev["end"],
            semantics=ev["semantics"],
            channel_targets=dict(sorted(ev["targets"].items())),
            exemptions=frozenset(ev["exemptions"]),
        )
        for ev in raw_events
    )
    return Plan(label=label, events=events, total_frames=total_frames, fps=float(fps))


def validate_plan(p: Plan) -> ValidationReport:
    """Structural checks: coverage, ordering, target ranges; rules plan_*."""
    report = ValidationReport()
    if not p.events:
        report.violations.append(Violation("plan_empty", "", "plan has no events"))
        return report
    if p.total_frames < 1:
        report.violations.append(
            Violation("plan_span", "", f"total_frames must be >= 1, got {p.total_frames}")
        )
    if p.events[0].start_frame != 1:
        report.violations.append(
            Violation(
                "plan_span",
                "",
                f"first event starts at frame {p.events[0].start_frame}, expected 1",
            )
        )
    if p.events[-1].end_frame != p.total_frames:
        report.violations.append(
            Violation(
                "plan_span",
                "",
                f"last event ends at frame {p.events[-1].end_frame}, expected {p.total_frames}",
            )
        )
    prev_end: int | None = None
    for k, ev in enumerate(p.events):
        if ev.start_frame > ev.end_frame:
            report.violations.append(
                Violation(
                    "plan_span",
                    "",
                    f"events[{k}] has start_frame {ev.start_frame} > end_frame {ev.end_frame}",
                    frame=ev.start_frame,
                )
            )
        if prev_end is not None:
            if ev.start_frame > prev_end + 1:
                report.violations.append(
                    Violation(
                        "plan_gap",
                        "",
                        f"gap between frame {prev_end} and events[{k}] at {ev.start_frame}",
                        frame=prev_end + 1,
                    )
                )
            elif ev.start_frame <= prev_end:
                report.violations.append(
                    Violation(
                        "plan_overlap",
                        "",
                        f"events[{k}] starts at {ev.start_frame} inside the previous event",
                        frame=ev.start_frame,
                    )
                )
        prev_end = ev.end_frame
        for name, interval in ev.channel_targets.items():
            if name not in CHANNEL_NAMES:
                report.violations.append(
                    Violation("plan_target_range", name, f"events[{k}] targets unknown channel {name!r}")
                )
                continue
            lo, hi = interval
            if lo > hi:
                report.violations.append(
                    Violation(
                        "plan_target_range",
                        name,
                        f"events[{k}] target for {name} has lo {lo:g} > hi {hi:g}",
                    )
                )
            lim_lo, lim_hi = (
                DEFAULT_HEAD_RANGES[name] if name in DEFAULT_HEAD_RANGES else (0.0, 1.0)
            )
            if lo < lim_lo or hi > lim_hi:
                report.violations.append(
                    Violation(
                        "plan_target_range",
                        name,
                        f"events[{k}] target [{lo:g}, {hi:g}] for {name} outside "
                        f"[{lim_lo:g}, {lim_hi:g}]",
                    )
                )
    return report


def signature_channels(
    label: str, templates: Mapping[str, tuple] | None = None
) -> tuple[str, ...]:
    """Channels a category's template commits to with midpoint >= 0.1 intensity.

    Head channels are excluded: direction is pose, not evidence of activity.
    """
    table = _TEMPLATES if templates is None else templates
    if label not in table:
        raise ValueError(f"unknown label {label!r}")
    out: list[str] = []
    for _, _, targets, _ in table[label]:
        for name, (lo, hi) in _expand_targets(targets).items():
            if name in HEAD_NAMES:
                continue
            if (lo + hi) / 2.0 >= 0.1 and name not in out:
                out.append(name)
    return tuple(out)


def signature_aus(
    label: str, templates: Mapping[str, tuple] | None = None
) -> tuple[str, ...]:
    """The AU subset of signature_channels; the default metric target set."""
    return tuple(n for n in signature_channels(label, templates) if n in AU_NAMES)


def _table_fail(context: str, message: str) -> None:
    raise ValueError(f"template table {context}: {message}")


def load_template_table(path) -> dict[str, tuple]:
    """Load a custom stage-template table from JSON.

    Format: {"version": 1, "categories": {label: [stage, ...]}} where each
    stage is {"ratio": num, "semantics": str, "targets": {channel: [lo, hi]},
    "exemptions": [rule, ...]}.  Channel names may use the bilateral
    shorthand (AU2, AU4, AU5, AU43).  Per category, ratios must be positive
    and sum to 1.  The result drops into plan(..., templates=...); note that
    label_signature critiques still derive from the built-in table, so custom
    labels skip them.
    """
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"template table {path} is not valid JSON: {exc}") from None
    if not isinstance(payload, dict):
        _table_fail(str(path), "top level must be an object")
    if payload.get("version") != TEMPLATE_TABLE_VERSION:
        _table_fail(str(path), f"unsupported version {payload.get('version')!r}")
    cats = payload.get("categories")
    if not isinstance(cats, dict) or not cats:
        _table_fail(str(path), "categories must be a non-empty object")
    table: dict[str, tuple] = {}
    for label, stages in cats.items():
        ctx = f"categories[{label!r}]"
        if not isinstance(stages, list) or not stages:
            _table_fail(ctx, "must be a non-empty list of stages")
        parsed = []
        for i, st in enumerate(stages):
            sctx = f"{ctx}[{i}]"
            if not isinstance(st, dict):
                _table_fail(sctx, "stage must be an object")
            ratio = st.get("ratio")
            if not isinstance(ratio, (int, float)) or not ratio > 0:
                _table_fail(sctx, f"ratio must be a positive number, got {ratio!r}")
            semantics = st.get("semantics")
            if not isinstance(semantics, str) or not semantics:
                _table_fail(sctx, "semantics must be a non-empty string")
            raw_targets = st.get("targets", {})
            if not isinstance(raw_targets, dict):
                _table_fail(sctx, "targets must be an object")
            targets: dict[str, tuple[float, float]] = {}
            for name, interval in raw_targets.items():
                tctx = f"{sctx}.targets[{name!r}]"
                if name not in CHANNEL_NAMES and name not in _BILATERAL:
                    _table_fail(tctx, "unknown channel")
                if (
                    not isinstance(interval, list)
                    or len(interval) != 2
                    or not all(isinstance(x, (int, float)) for x in interval)
                ):
                    _table_fail(tctx, f"interval must be [lo, hi], got {interval!r}")
                lo, hi = float(interval[0]), float(interval[1])
                if lo > hi:
                    _table_fail(tctx, f"lo {lo:g} > hi {hi:g}")
                if name in HEAD_NAMES:
                    rlo, rhi = DEFAULT_HEAD_RANGES[name]
                else:
                    rlo, rhi = 0.0, 1.0
                if lo < rlo or hi > rhi:
                    _table_fail(
                        tctx, f"[{lo:g}, {hi:g}] outside legal [{rlo:g}, {rhi:g}]"
                    )
                targets[name] = (lo, hi)
            exempt = st.get("exemptions", [])
            if not isinstance(exempt, list) or not all(
                isinstance(e, str) for e in exempt
            ):
                _table_fail(sctx, "exemptions must be a list of rule names")
            parsed.append((float(ratio), semantics, targets, tuple(exempt)))
        total = sum(p[0] for p in parsed)
        if abs(total - 1.0) > 1e-6:
            _table_fail(ctx, f"stage ratios sum to {total:g}, expected 1")
        table[label] = tuple(parsed)
    return table


def _plan_payload(p: Plan) -> dict:
    return {
        "label": p.label,
        "fps": p.fps,
        "total_frames": p.total_frames,
        "events": [
            {
                "start_frame": ev.start_frame,
                "end_frame": ev.end_frame,
                "semantics": ev.semantics,
                "channel_targets": {
                    name: [lo, hi] for name, (lo, hi) in sorted(ev.channel_targets.items())
                },
                "exemptions": sorted(ev.exemptions),
            }
            for ev in p.events
        ],
    }


def encode_plan(p: Plan) -> str:
    """Serialize a plan to the interchange JSON (stable key order)."""
    return json.dumps(_plan_payload(p), sort_keys=True, indent=2) + "\n"


def encode_agent_request(
    label: str,
    total_frames: int,
    fps: float,
    instructions: str = "",
    initial_pose: Sequence[float] = (0.0, 0.0, 0.0),
) -> str:
    """Request envelope an external planner fills in with events."""
    payload = {
        "label": label,
        "fps": float(fps),
        "total_frames": int(total_frames),
        "instructions": instructions,
        "initial_pose": {name: float(v) for name, v in zip(HEAD_NAMES, initial_pose)},
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _fail(path: str, message: str) -> ValueError:
    return ValueError(f"{path}: {message}")


def decode_agent_plan(text: str) -> Plan:
    """Parse and validate an externally produced plan JSON.

    Errors carry the JSON field path.  Events must exactly partition
    [1, total_frames] in order.
    """
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"plan payload is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise _fail("$", "plan payload must be an object")
    label = payload.get("label")
    if not isinstance(label, str) or not label:
        raise _fail("label", "must be a non-empty string")
    fps = payload.get("fps")
    if not isinstance(fps, (int, float)) or not fps > 0:
        raise _fail("fps", "must be a positive number")
    total = payload.get("total_frames")
    if not isinstance(total, int) or total < 1:
        raise _fail("total_frames", "must be a positive integer")
    events_raw = payload.get("events")
    if not isinstance(events_raw, list) or not events_raw:
        raise _fail("events", "must be a non-empty list")
    events: list[StagedEvent] = []
    cursor = 1
    for k, ev in enumerate(events_raw):
        path = f"events[{k}]"
        if not isinstance(ev, dict):
            raise _fail(path, "must be an object")
        start = ev.get("start_frame")
        end = ev.get("end_frame")
        if not isinstance(start, int) or not isinstance(end, int):
            raise _fail(path, "start_frame and end_frame must be integers")
        if start != cursor:
            raise _fail(
                f"{path}.start_frame",
                f"events do not partition duration (expected {cursor}, got {start})",
            )
        if end < start:
            raise _fail(f"{path}.end_frame", f"must be >= start_frame {start}")
        semantics = ev.get("semantics", "")
        if not isinstance(semantics, str):
            raise _fail(f"{path}.semantics", "must be a string")
        targets_raw = ev.get("channel_targets", {})
        if not isinstance(targets_raw, dict):
            raise _fail(f"{path}.channel_targets", "must be an object")
        targets: dict[str, tuple[float, float]] = {}
        for name, interval in targets_raw.items():
            tpath = f"{path}.channel_targets.{name}"
            if name not in CHANNEL_NAMES:
                raise _fail(tpath, "unknown channel")
            if (
                not isinstance(interval, (list, tuple))
                or len(interval) != 2
                or not all(isinstance(v, (int, float)) for v in interval)
            ):
                raise _fail(tpath, "must be a [lo, hi] pair of numbers")
            lo, hi = float(interval[0]), float(interval[1])
            if lo > hi:
                raise _fail(tpath, f"lo {lo:g} > hi {hi:g}")
            lim_lo, lim_hi = (
                DEFAULT_HEAD_RANGES[name] if name in DEFAULT_HEAD_RANGES else (0.0, 1.0)
            )
            if lo < lim_lo or hi > lim_hi:
                raise _fail(tpath, f"[{lo:g}, {hi:g}] outside [{lim_lo:g}, {lim_hi:g}]")
            targets[name] = (lo, hi)
        exempt_raw = ev.get("exemptions", [])
        if not isinstance(exempt_raw, list) or not all(isinstance(x, str) for x in exempt_raw):
            raise _fail(f"{path}.exemptions", "must be a list of rule ids")
        events.append(
            StagedEvent(
                start_frame=start,
                end_frame=end,
                semantics=semantics,
                channel_targets=targets,
                exemptions=frozenset(exempt_raw),
            )
        )
        cursor = end + 1
    if cursor - 1 != total:
        raise _fail(
            "events",
            f"events do not partition duration (cover 1..{cursor - 1}, total_frames {total})",
        )
    return Plan(label=label, events=tuple(events), total_frames=total, fps=float(fps))
