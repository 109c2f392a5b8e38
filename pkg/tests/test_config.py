"""Config file parsing, dumping, and validation."""

import os

import pytest

from vindet.config import ExperimentConfig, dump_config, load_config, parse_config

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


class TestParsing:
    def test_basic_keys(self):
        cfg = parse_config("""
            seed = 7
            geometry.height = 64   # inline comment
            geometry.width = 64
            encoder.dims = 8,12,16
            dwti.enabled = false
            loss.alpha = 0.4
        """)
        assert cfg.seed == 7
        assert cfg.geometry.height == 64
        assert cfg.encoder.dims == (8, 12, 16)
        assert cfg.dwti.enabled is False
        assert cfg.loss.alpha == 0.4

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown key"):
            parse_config("geometry.depth = 3")
        with pytest.raises(ValueError, match="unknown key"):
            parse_config("nonsense = 1")

    def test_bad_value_reports_line(self):
        with pytest.raises(ValueError, match="line 1"):
            parse_config("geometry.height = tall")

    def test_bad_boolean(self):
        with pytest.raises(ValueError):
            parse_config("dwti.enabled = maybe")

    def test_roundtrip_through_dump(self):
        cfg = ExperimentConfig(seed=3)
        cfg.geometry.views = (1, 3)
        cfg.encoder.dims = (8, 16)
        text = dump_config(cfg)
        back = parse_config(text)
        assert back.seed == 3
        assert back.geometry.views == (1, 3)
        assert back.encoder.dims == (8, 16)
        assert dump_config(back) == text

    def test_defaults_validate(self):
        ExperimentConfig().validate()

    @pytest.mark.parametrize("name", ["desk.cfg", "paper.cfg"])
    def test_shipped_configs_validate(self, name):
        load_config(os.path.join(REPO, "configs", name)).validate()


class TestValidation:
    def test_patch_divisibility(self):
        cfg = ExperimentConfig()
        cfg.geometry.patch = 5
        with pytest.raises(ValueError, match="patch"):
            cfg.validate()

    def test_views_must_ascend(self):
        cfg = ExperimentConfig()
        cfg.geometry.views = (2, 2, 3)
        with pytest.raises(ValueError, match="ascending"):
            cfg.validate()

    def test_view_longer_than_clip(self):
        cfg = ExperimentConfig()
        cfg.geometry.views = (1, 2, 4)
        with pytest.raises(ValueError, match="exceeds"):
            cfg.validate()

    def test_window_vs_side(self):
        cfg = ExperimentConfig()
        cfg.encoder.window = 16
        with pytest.raises(ValueError, match="window"):
            cfg.validate()

    def test_heads_divide_dims(self):
        cfg = ExperimentConfig()
        cfg.encoder.heads = (3, 4)
        with pytest.raises(ValueError, match="heads"):
            cfg.validate()

    def test_frequency_needs_pow2_patch(self):
        cfg = ExperimentConfig()
        cfg.geometry.height = cfg.geometry.width = 36
        cfg.geometry.patch = 6
        cfg.glob.patch = 6
        cfg.encoder.stages = 1
        cfg.encoder.depths = (1,)
        cfg.encoder.heads = (2,)
        cfg.encoder.window = 2
        cfg.dwti.window = 2
        cfg.decoder.channels = (32,)
        with pytest.raises(ValueError, match="power-of-two"):
            cfg.validate()

    def test_perturb_kind(self):
        cfg = ExperimentConfig()
        cfg.perturb.kind = "blur"
        with pytest.raises(ValueError, match="perturbation"):
            cfg.validate()
