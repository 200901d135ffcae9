"""Hand-built violation corpus: 12 sequences, each exhibiting one failure.

Eight cases are locally repairable; four need new plan targets and must
escalate.  Sequences are raw external-style input, deliberately not passed
through the invariant projector.
"""
from dataclasses import dataclass

import numpy as np

from eyerig.channels import ControlSequence, channel_index
from eyerig.planner import Plan, StagedEvent, plan as build_plan

FPS = 25.0
T = 50


@dataclass(frozen=True)
class CorpusCase:
    name: str
    repairable: bool
    plan: Plan
    sequence: ControlSequence
    expect_rules: tuple[str, ...]
    instructions: str = ""


def _neutral_plan(targets=None, exemptions=(), label="custom"):
    ev = StagedEvent(1, T, "hold", dict(targets or {}), frozenset(exemptions))
    return Plan(label=label, events=(ev,), total_frames=T, fps=FPS)


def _seq(**channel_spans) -> ControlSequence:
    """Zeros except the given channel: {name: [(start_idx, end_idx, value)]}."""
    v = np.zeros((T, 17))
    for name, spans in channel_spans.items():
        j = channel_index(name)
        for a, b, val in spans:
            v[a : b + 1, j] = val
    return ControlSequence(v, FPS)


def _seq_track(**channel_tracks) -> ControlSequence:
    """Zeros except full per-frame tracks: {name: array_like of length T}."""
    v = np.zeros((T, 17))
    for name, track in channel_tracks.items():
        v[:, channel_index(name)] = np.asarray(track, dtype=np.float64)
    return ControlSequence(v, FPS)


def _ramped(peak, up_start, hold_end, step):
    """Rate-legal rise to `peak` at up_start, hold, then fall after hold_end."""
    track = np.zeros(T)
    level = 0.0
    i = up_start
    while level < peak - 1e-9 and i < T:
        level = min(peak, level + step)
        track[i] = level
        i += 1
    track[i : hold_end + 1] = peak
    level = peak
    i = hold_end + 1
    while level > 1e-9 and i < T:
        level = max(0.0, level - step)
        track[i] = level
        i += 1
    return track


def build_corpus() -> list[CorpusCase]:
    cases: list[CorpusCase] = []

    # 1. blink too short: 2 frames = 80 ms < 100 ms
    cases.append(
        CorpusCase(
            "blink_too_short",
            True,
            _neutral_plan(),
            _seq(AU43_L=[(10, 11, 0.9)], AU43_R=[(10, 11, 0.9)]),
            ("blink_duration",),
        )
    )

    # 2. blink too long: 20 frames = 800 ms > 500 ms
    cases.append(
        CorpusCase(
            "blink_too_long",
            True,
            _neutral_plan(),
            _seq(AU43_L=[(10, 29, 0.9)], AU43_R=[(10, 29, 0.9)]),
            ("blink_duration",),
        )
    )

    # 3. two valid blinks only 200 ms apart (< 400 ms)
    cases.append(
        CorpusCase(
            "interblink_too_short",
            True,
            _neutral_plan(),
            _seq(
                AU43_L=[(5, 9, 0.9), (15, 19, 0.9)],
                AU43_R=[(5, 9, 0.9), (15, 19, 0.9)],
            ),
            ("interblink_interval",),
        )
    )

    # 4. one lid far ahead of the other without a wink exemption
    cases.append(
        CorpusCase(
            "blink_asymmetry",
            True,
            _neutral_plan(),
            _seq(AU43_L=[(15, 20, 0.9)], AU43_R=[(15, 20, 0.1)]),
            ("blink_asymmetry",),
        )
    )

    # 5. brow raiser and brow lowerer both strong on the same side
    cases.append(
        CorpusCase(
            "coactivation_brow",
            True,
            _neutral_plan(),
            _seq(AU4_L=[(5, 15, 0.8)], AU2_L=[(5, 15, 0.7)]),
            ("au_coactivation",),
        )
    )

    # 6. lid raiser against closure on the right (closure itself is valid)
    cases.append(
        CorpusCase(
            "coactivation_lid",
            True,
            _neutral_plan(),
            _seq(
                AU5_R=[(5, 10, 0.8)],
                AU43_L=[(5, 10, 0.7)],
                AU43_R=[(5, 10, 0.7)],
            ),
            ("au_coactivation",),
        )
    )

    # 7. instantaneous gaze jump, too brief to demand head support
    cases.append(
        CorpusCase(
            "gaze_jump",
            True,
            _neutral_plan(),
            _seq(gaze_left=[(20, 22, 0.8)]),
            ("gaze_main_sequence",),
        )
    )

    # 8. long strong sideways gaze with the head frozen
    cases.append(
        CorpusCase(
            "gaze_without_head",
            True,
            _neutral_plan(),
            _seq_track(gaze_right=_ramped(0.7, 6, 40, 0.2)),
            ("gaze_head_coordination",),
        )
    )

    # 9. constant raised gaze from frame one: no saccade ever happens
    cases.append(
        CorpusCase(
            "gaze_plateau",
            False,
            _neutral_plan(),
            _seq(gaze_up=[(0, T - 1, 0.6)]),
            ("gaze_main_sequence",),
        )
    )

    # 10. plan demands a brow raise the sequence never performs
    cases.append(
        CorpusCase(
            "target_missed",
            False,
            _neutral_plan(targets={"AU1": (0.6, 0.8)}),
            _seq(),
            ("event_target",),
        )
    )

    # 11. instructed right, sequence looks left
    cases.append(
        CorpusCase(
            "instruction_opposite",
            False,
            _neutral_plan(),
            _seq_track(gaze_left=_ramped(0.4, 10, 30, 0.1)),
            ("instruction_consistency",),
            instructions="look to the right",
        )
    )

    # 12. a labeled plan realized as a completely inert sequence
    cases.append(
        CorpusCase(
            "silent_signature",
            False,
            build_plan("drowsiness", T, FPS),
            _seq(),
            ("label_signature",),
        )
    )
    return cases
