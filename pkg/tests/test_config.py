"""flat 实验配置与运行时配置"""

import pytest

from src.core.config import (
    RuntimeSettings,
    build_config,
    config_from_snapshot,
    config_snapshot,
    dump_config,
    load_config,
    parse_flat,
    valid_keys,
    with_overrides,
)
from src.core.models import ExperimentConfig, NARVariant
from src.utils.error_handler import ConfigError, CorpusError

from tests.conftest import tiny_experiment


class TestFlatConfig:
    def test_parse_with_comments(self):
        flat = parse_flat("# 注释\n\nmodel.variant = ctc\nmtl.lambda = 0.3  # 权重\ntrain.betas = [0.9, 0.98]\n")
        assert flat == {"model.variant": "ctc", "mtl.lambda": 0.3, "train.betas": [0.9, 0.98]}
        config = build_config(flat)
        assert config.model.variant == NARVariant.CTC
        assert config.mtl.lambda_ == 0.3
        assert config.train.betas == (0.9, 0.98)

    def test_unknown_key_lists_valid_keys(self):
        with pytest.raises(ConfigError) as err:
            parse_flat("mtl.lamda = 0.5\n")
        assert "mtl.lamda" in str(err.value)
        assert "mtl.lambda" in str(err.value)

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            parse_flat("model.variant ctc\n")

    def test_valid_keys_use_aliases(self):
        keys = valid_keys()
        assert "mtl.lambda" in keys and "mtl.lambda_" not in keys
        assert "glancing.ratio_start" in keys

    @pytest.mark.parametrize(
        "text",
        ["model.d_model = 10\nmodel.n_heads = 4\n", "mtl.lambda = 1.5\n", "model.variant = ctc\nmodel.upsample_factor = 1\n"],
    )
    def test_invalid_values(self, text):
        with pytest.raises(ConfigError):
            build_config(parse_flat(text))

    def test_dump_round_trip(self):
        config = tiny_experiment(NARVariant.CTC, mtl={"enabled": True, "lambda": 0.25})
        assert build_config(parse_flat(dump_config(config))) == config

    def test_overrides(self):
        config = with_overrides(ExperimentConfig(), {"train.seed": 9, "decode.mode": "beam"})
        assert config.train.seed == 9
        assert config.decode.mode.value == "beam"
        with pytest.raises(ConfigError):
            with_overrides(ExperimentConfig(), {"train.sed": 9})

    def test_snapshot_round_trip(self):
        config = tiny_experiment(mtl={"enabled": True})
        assert config_from_snapshot(config_snapshot(config)) == config

    def test_load(self, tmp_path):
        assert load_config(None) == ExperimentConfig()
        path = tmp_path / "exp.cfg"
        path.write_text("train.max_steps = 7\n", encoding="utf-8")
        assert load_config(path).train.max_steps == 7
        with pytest.raises(CorpusError):
            load_config(tmp_path / "missing.cfg")


class TestRuntimeSettings:
    def test_environment_overrides(self, monkeypatch):
        monkeypatch.setenv("DECODE_MAX_CONCURRENCY", "3")
        monkeypatch.setenv("LOG_LEVEL", "DEBUG")
        settings = RuntimeSettings()
        assert settings.decode_max_concurrency == 3
        assert settings.log_level == "DEBUG"
