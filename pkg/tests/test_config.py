"""Pipeline config loading, overrides, and validation."""
import json

import pytest

from eyerig.config import PipelineConfig, load_pipeline_config
from eyerig.critic import RuleSet
from eyerig.guidance import GuidanceParams


def _write(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


class TestDefaults:
    def test_default_construction(self):
        cfg = PipelineConfig()
        assert cfg.fps == 25.0
        assert cfg.blend_frames == 3
        assert cfg.query_weights is None
        assert cfg.rules == RuleSet()
        assert cfg.guidance == GuidanceParams()
        assert cfg.template_table is None
        assert cfg.seed is None
        assert cfg.sample_k == 1

    def test_empty_file_is_defaults(self, tmp_path):
        cfg = load_pipeline_config(_write(tmp_path, {}))
        assert cfg == PipelineConfig()


class TestLoading:
    def test_partial_rules_and_guidance(self, tmp_path):
        cfg = load_pipeline_config(
            _write(
                tmp_path,
                {
                    "fps": 30.0,
                    "blend_frames": 5,
                    "rules": {"blink_max_ms": 600.0},
                    "guidance": {"n_steps": 12, "omega_hi": 6.0},
                    "seed": 9,
                    "sample_k": 2,
                },
            )
        )
        assert cfg.fps == 30.0
        assert cfg.rules.blink_max_ms == 600.0
        assert cfg.rules.blink_min_ms == RuleSet().blink_min_ms
        assert cfg.guidance.n_steps == 12
        assert cfg.guidance.omega_lo == GuidanceParams().omega_lo
        assert cfg.seed == 9
        assert cfg.sample_k == 2

    def test_query_weights(self, tmp_path):
        cfg = load_pipeline_config(_write(tmp_path, {"query_weights": [1.0] * 17}))
        assert cfg.query_weights == (1.0,) * 17

    def test_template_table_relative_to_config(self, tmp_path):
        table = {
            "version": 1,
            "categories": {
                "custom": [
                    {"ratio": 1.0, "semantics": "hold", "targets": {"AU5": [0.2, 0.4]}}
                ]
            },
        }
        (tmp_path / "table.json").write_text(json.dumps(table))
        cfg = load_pipeline_config(
            _write(tmp_path, {"template_table_path": "table.json"})
        )
        assert cfg.template_table is not None
        assert "custom" in cfg.template_table

    def test_missing_table_fails_at_load(self, tmp_path):
        with pytest.raises(ValueError, match="does not exist"):
            load_pipeline_config(
                _write(tmp_path, {"template_table_path": "absent.json"})
            )


class TestRejection:
    def test_unknown_top_level_field(self, tmp_path):
        with pytest.raises(ValueError, match="unknown fields"):
            load_pipeline_config(_write(tmp_path, {"bogus": 1}))

    def test_unknown_rule_field(self, tmp_path):
        with pytest.raises(ValueError, match="unknown fields"):
            load_pipeline_config(_write(tmp_path, {"rules": {"bogus": 1}}))

    def test_unknown_guidance_field(self, tmp_path):
        with pytest.raises(ValueError, match="unknown fields"):
            load_pipeline_config(_write(tmp_path, {"guidance": {"bogus": 1}}))

    def test_bad_fps(self, tmp_path):
        with pytest.raises(ValueError, match="fps"):
            load_pipeline_config(_write(tmp_path, {"fps": 0}))

    def test_bad_blend(self):
        with pytest.raises(ValueError, match="blend_frames"):
            PipelineConfig(blend_frames=-1)

    def test_bad_sample_k(self):
        with pytest.raises(ValueError, match="sample_k"):
            PipelineConfig(sample_k=0)

    def test_short_weights(self):
        with pytest.raises(ValueError, match="17"):
            PipelineConfig(query_weights=(1.0, 2.0))

    def test_negative_weights(self):
        with pytest.raises(ValueError, match="non-negative"):
            PipelineConfig(query_weights=(-1.0,) * 17)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{")
        with pytest.raises(ValueError, match="not valid JSON"):
            load_pipeline_config(path)

    def test_non_object(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("[1]")
        with pytest.raises(ValueError, match="object"):
            load_pipeline_config(path)
