"""Plan construction, instruction parsing, and the agent-plan wire format."""
import json

import pytest

from eyerig.channels import DEFAULT_HEAD_RANGES, HEAD_NAMES
from eyerig.planner import (
    CATEGORIES,
    Plan,
    StagedEvent,
    decode_agent_plan,
    encode_agent_request,
    encode_plan,
    load_template_table,
    parse_instructions,
    plan,
    signature_aus,
    signature_channels,
    validate_plan,
)

EXPECTED_CATEGORIES = {
    "sadness",
    "fear",
    "disgust",
    "contempt",
    "anger",
    "surprise",
    "laughter",
    "cognitive_effort",
    "low_arousal_negative",
    "social_engagement",
    "evasive_response",
    "drowsiness",
}


def test_category_roster():
    assert set(CATEGORIES) == EXPECTED_CATEGORIES
    assert len(CATEGORIES) == 12


@pytest.mark.parametrize("label", sorted(EXPECTED_CATEGORIES))
@pytest.mark.parametrize("total", [1, 2, 3, 7, 50, 120])
def test_all_categories_produce_valid_plans(label, total):
    p = plan(label, total, 25.0)
    assert p.label == label
    assert p.total_frames == total
    report = validate_plan(p)
    assert report.ok, [v.message for v in report.violations]
    # exact coverage, in order
    assert p.events[0].start_frame == 1
    assert p.events[-1].end_frame == total
    for prev, nxt in zip(p.events, p.events[1:]):
        assert nxt.start_frame == prev.end_frame + 1


def test_drowsiness_stage_allocation():
    p = plan("drowsiness", 50, 25.0)
    assert [ev.n_frames for ev in p.events] == [6, 14, 30]
    middle = p.events[1]
    assert middle.channel_targets["AU43_L"] == (0.65, 0.95)
    assert middle.channel_targets["AU43_R"] == (0.65, 0.95)
    assert "blink_duration" in middle.exemptions
    assert p.events[2].channel_targets["pitch"] == (-12.0, -5.0)


def test_cognitive_effort_stage_allocation():
    p = plan("cognitive_effort", 100, 25.0)
    assert [ev.n_frames for ev in p.events] == [12, 24, 64]
    late = p.events[2]
    assert late.channel_targets["gaze_left"] == (0.25, 0.50)
    assert late.channel_targets["pitch"] == (-12.0, -5.0)


def test_short_duration_merges_stages():
    p = plan("fear", 2, 25.0)
    assert len(p.events) == 1
    ev = p.events[0]
    assert (ev.start_frame, ev.end_frame) == (1, 2)
    # union of stage targets, later stages override earlier ones
    assert "AU5_L" in ev.channel_targets
    assert "AU1" in ev.channel_targets
    assert validate_plan(p).ok


def test_every_stage_gets_at_least_one_frame():
    p = plan("drowsiness", 3, 25.0)
    assert len(p.events) == 3
    assert all(ev.n_frames >= 1 for ev in p.events)
    assert sum(ev.n_frames for ev in p.events) == 3


def test_unknown_label_lists_categories():
    with pytest.raises(ValueError, match="unknown label"):
        plan("boredom", 50, 25.0)
    try:
        plan("boredom", 50, 25.0)
    except ValueError as exc:
        for label in EXPECTED_CATEGORIES:
            assert label in str(exc)


def test_bad_duration_and_fps_rejected():
    with pytest.raises(ValueError, match="total_frames"):
        plan("anger", 0, 25.0)
    with pytest.raises(ValueError, match="fps"):
        plan("anger", 50, 0.0)


def test_initial_pose_out_of_range_rejected():
    with pytest.raises(ValueError, match="yaw"):
        plan("anger", 50, 25.0, initial_pose=(120.0, 0.0, 0.0))


def test_first_event_head_targets_contain_initial_pose():
    pose = (10.0, -5.0, 3.0)
    p = plan("sadness", 50, 25.0, initial_pose=pose)
    first = p.events[0]
    for name, value in zip(HEAD_NAMES, pose):
        lo, hi = first.channel_targets[name]
        assert lo <= value <= hi
        lim_lo, lim_hi = DEFAULT_HEAD_RANGES[name]
        assert lim_lo <= lo <= hi <= lim_hi


def test_first_event_widening_keeps_template_target():
    # laughter stage 1 has no head targets; default window is pose +/- 2 deg
    p = plan("laughter", 60, 25.0)
    first = p.events[0]
    assert first.channel_targets["yaw"] == (-2.0, 2.0)
    assert first.channel_targets["pitch"] == (-2.0, 2.0)
    assert first.channel_targets["roll"] == (-2.0, 2.0)


class TestParseInstructions:
    def test_empty(self):
        intent = parse_instructions("")
        assert intent.is_empty()

    def test_gaze_direction(self):
        intent = parse_instructions("look to the left then hold")
        assert intent.gaze == ("left",)
        assert intent.head == ()

    def test_gaze_up(self):
        assert parse_instructions("glance up").gaze == ("up",)

    def test_head_turn(self):
        intent = parse_instructions("turn your head to the right")
        assert intent.head == ("right",)
        assert intent.gaze == ()

    def test_head_lower(self):
        assert parse_instructions("lower your head").head == ("down",)

    def test_head_raise(self):
        assert parse_instructions("raise your head").head == ("up",)

    def test_brow_raise_both(self):
        assert parse_instructions("raise your eyebrows").brow == "both"

    def test_brow_raise_side(self):
        assert parse_instructions("raise your left eyebrow").brow == "left"

    def test_blink(self):
        assert parse_instructions("blink twice").blink is True

    def test_wink_default_side(self):
        assert parse_instructions("give a wink").wink == "left"

    def test_wink_side_not_gaze(self):
        intent = parse_instructions("wink right")
        assert intent.wink == "right"
        assert intent.gaze == ()

    def test_combined(self):
        intent = parse_instructions("look down, blink, and lower your head")
        assert intent.gaze == ("down",)
        assert intent.blink is True
        assert intent.head == ("down",)

    def test_unknown_words_ignored(self):
        assert parse_instructions("please remain completely natural").is_empty()


def test_instruction_adds_gaze_target():
    p = plan("sadness", 50, 25.0, instructions="look to the right")
    targeted = [ev for ev in p.events if "gaze_right" in ev.channel_targets]
    assert targeted
    lo, hi = targeted[0].channel_targets["gaze_right"]
    assert 0.0 < lo < hi <= 1.0


def test_instruction_strips_opposing_gaze():
    base = plan("cognitive_effort", 60, 25.0)
    assert any("gaze_left" in ev.channel_targets for ev in base.events)
    p = plan("cognitive_effort", 60, 25.0, instructions="look right")
    assert not any("gaze_left" in ev.channel_targets for ev in p.events)
    assert any("gaze_right" in ev.channel_targets for ev in p.events)


def test_instruction_strips_opposing_head_target():
    p = plan("evasive_response", 60, 25.0, instructions="turn your head to the right")
    for ev in p.events[1:]:
        yaw = ev.channel_targets.get("yaw")
        if yaw is not None:
            assert yaw[0] >= 0.0
    assert p.events[-1].channel_targets["yaw"] == (8.0, 20.0)


def test_instruction_blink_adds_closure_target():
    p = plan("contempt", 60, 25.0, instructions="blink")
    hit = [
        ev
        for ev in p.events
        if ev.channel_targets.get("AU43_L", (0, 0))[1] >= 0.5
        and ev.channel_targets.get("AU43_R", (0, 0))[1] >= 0.5
    ]
    assert hit


def test_instruction_wink_sets_asymmetry_exemption():
    p = plan("contempt", 60, 25.0, instructions="wink right")
    hit = [ev for ev in p.events if "AU43_R" in ev.channel_targets]
    assert hit
    assert "blink_asymmetry" in hit[0].exemptions
    assert not any("gaze_right" in ev.channel_targets for ev in p.events)


def test_relax_widens_every_interval():
    base = plan("anger", 50, 25.0)
    relaxed = plan("anger", 50, 25.0, relax=0.5)
    for ev_b, ev_r in zip(base.events, relaxed.events):
        for name, (lo, hi) in ev_b.channel_targets.items():
            rlo, rhi = ev_r.channel_targets[name]
            assert rlo <= lo and rhi >= hi
            if name in DEFAULT_HEAD_RANGES:
                lim_lo, lim_hi = DEFAULT_HEAD_RANGES[name]
            else:
                lim_lo, lim_hi = 0.0, 1.0
            assert lim_lo <= rlo <= rhi <= lim_hi


def test_signature_channels_drowsiness():
    chans = signature_channels("drowsiness")
    assert "AU43_L" in chans and "AU43_R" in chans
    assert "pitch" not in chans


def test_signature_aus_cognitive_effort():
    aus = signature_aus("cognitive_effort")
    assert set(aus) == {"AU5_L", "AU5_R", "AU4_L", "AU4_R", "AU7"}


def test_signature_unknown_label():
    with pytest.raises(ValueError, match="unknown label"):
        signature_channels("boredom")


class TestValidatePlanViolations:
    def _mk(self, events, total=20):
        return Plan(label="anger", events=tuple(events), total_frames=total, fps=25.0)

    def test_empty_plan(self):
        report = validate_plan(self._mk([]))
        assert [v.rule for v in report.violations] == ["plan_empty"]

    def test_gap(self):
        events = [
            StagedEvent(1, 10, "a", {}),
            StagedEvent(12, 20, "b", {}),
        ]
        rules = [v.rule for v in validate_plan(self._mk(events)).violations]
        assert "plan_gap" in rules

    def test_overlap(self):
        events = [
            StagedEvent(1, 10, "a", {}),
            StagedEvent(10, 20, "b", {}),
        ]
        rules = [v.rule for v in validate_plan(self._mk(events)).violations]
        assert "plan_overlap" in rules

    def test_span(self):
        events = [StagedEvent(2, 20, "a", {})]
        rules = [v.rule for v in validate_plan(self._mk(events)).violations]
        assert "plan_span" in rules

    def test_target_out_of_range(self):
        events = [StagedEvent(1, 20, "a", {"AU1": (0.5, 1.5)})]
        rules = [v.rule for v in validate_plan(self._mk(events)).violations]
        assert rules == ["plan_target_range"]

    def test_unknown_channel(self):
        events = [StagedEvent(1, 20, "a", {"AU99": (0.1, 0.2)})]
        rules = [v.rule for v in validate_plan(self._mk(events)).violations]
        assert rules == ["plan_target_range"]


@pytest.mark.parametrize("label", sorted(EXPECTED_CATEGORIES))
def test_encode_decode_round_trip(label):
    p = plan(label, 40, 25.0, instructions="blink")
    decoded = decode_agent_plan(encode_plan(p))
    assert decoded == p


def test_encode_plan_deterministic():
    a = encode_plan(plan("surprise", 80, 30.0))
    b = encode_plan(plan("surprise", 80, 30.0))
    assert a == b


def test_agent_request_envelope():
    payload = json.loads(encode_agent_request("fear", 50, 25.0, "look left", (5.0, 0.0, 0.0)))
    assert payload["label"] == "fear"
    assert payload["total_frames"] == 50
    assert payload["fps"] == 25.0
    assert payload["instructions"] == "look left"
    assert payload["initial_pose"] == {"yaw": 5.0, "pitch": 0.0, "roll": 0.0}
    assert "events" not in payload


class TestDecodeAgentPlan:
    def _payload(self):
        return json.loads(encode_plan(plan("anger", 20, 25.0)))

    def test_invalid_json(self):
        with pytest.raises(ValueError, match="not valid JSON"):
            decode_agent_plan("{nope")

    def test_missing_label(self):
        payload = self._payload()
        del payload["label"]
        with pytest.raises(ValueError, match="label"):
            decode_agent_plan(json.dumps(payload))

    def test_bad_fps(self):
        payload = self._payload()
        payload["fps"] = -1
        with pytest.raises(ValueError, match="fps"):
            decode_agent_plan(json.dumps(payload))

    def test_partition_gap_reported_with_path(self):
        payload = self._payload()
        payload["events"][1]["start_frame"] += 1
        with pytest.raises(ValueError, match=r"events\[1\].start_frame.*partition"):
            decode_agent_plan(json.dumps(payload))

    def test_total_frames_mismatch(self):
        payload = self._payload()
        payload["total_frames"] += 5
        with pytest.raises(ValueError, match="partition"):
            decode_agent_plan(json.dumps(payload))

    def test_unknown_channel_path(self):
        payload = self._payload()
        payload["events"][0]["channel_targets"]["AU99"] = [0.1, 0.2]
        with pytest.raises(ValueError, match=r"events\[0\].channel_targets.AU99"):
            decode_agent_plan(json.dumps(payload))

    def test_target_interval_order(self):
        payload = self._payload()
        payload["events"][0]["channel_targets"]["AU1"] = [0.8, 0.2]
        with pytest.raises(ValueError, match="lo 0.8 > hi 0.2"):
            decode_agent_plan(json.dumps(payload))

    def test_empty_events(self):
        payload = self._payload()
        payload["events"] = []
        with pytest.raises(ValueError, match="events"):
            decode_agent_plan(json.dumps(payload))


class TestTemplateTable:
    def _write(self, tmp_path, payload):
        path = tmp_path / "table.json"
        path.write_text(json.dumps(payload))
        return path

    def _valid(self):
        return {
            "version": 1,
            "categories": {
                "calm_focus": [
                    {
                        "ratio": 0.3,
                        "semantics": "settle",
                        "targets": {"AU43": [0.1, 0.2]},
                    },
                    {
                        "ratio": 0.7,
                        "semantics": "steady gaze",
                        "targets": {"AU5": [0.2, 0.4], "gaze_up": [0.1, 0.2]},
                        "exemptions": ["blink_duration"],
                    },
                ]
            },
        }

    def test_load_and_plan(self, tmp_path):
        table = load_template_table(self._write(tmp_path, self._valid()))
        p = plan("calm_focus", 40, 25.0, templates=table)
        assert p.total_frames == 40
        assert len(p.events) == 2
        assert "AU5_L" in p.events[1].channel_targets
        assert "blink_duration" in p.events[1].exemptions

    def test_custom_signature(self, tmp_path):
        table = load_template_table(self._write(tmp_path, self._valid()))
        sig = signature_channels("calm_focus", table)
        assert "AU43_L" in sig and "gaze_up" in sig

    def test_builtin_labels_hidden(self, tmp_path):
        table = load_template_table(self._write(tmp_path, self._valid()))
        with pytest.raises(ValueError, match="calm_focus"):
            plan("anger", 40, 25.0, templates=table)

    def test_ratio_sum_enforced(self, tmp_path):
        payload = self._valid()
        payload["categories"]["calm_focus"][0]["ratio"] = 0.5
        with pytest.raises(ValueError, match="sum"):
            load_template_table(self._write(tmp_path, payload))

    def test_unknown_channel(self, tmp_path):
        payload = self._valid()
        payload["categories"]["calm_focus"][0]["targets"] = {"AU99": [0.1, 0.2]}
        with pytest.raises(ValueError, match="unknown channel"):
            load_template_table(self._write(tmp_path, payload))

    def test_interval_outside_range(self, tmp_path):
        payload = self._valid()
        payload["categories"]["calm_focus"][0]["targets"] = {"AU43": [0.1, 1.4]}
        with pytest.raises(ValueError, match="legal"):
            load_template_table(self._write(tmp_path, payload))

    def test_head_interval_checked_in_degrees(self, tmp_path):
        payload = self._valid()
        payload["categories"]["calm_focus"][0]["targets"] = {"yaw": [-5.0, 5.0]}
        table = load_template_table(self._write(tmp_path, payload))
        assert table["calm_focus"][0][2]["yaw"] == (-5.0, 5.0)

    def test_bad_version(self, tmp_path):
        payload = self._valid()
        payload["version"] = 9
        with pytest.raises(ValueError, match="version"):
            load_template_table(self._write(tmp_path, payload))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "table.json"
        path.write_text("{")
        with pytest.raises(ValueError, match="not valid JSON"):
            load_template_table(path)
