"""
Tests for run configuration documents and presets.
"""

import json

import pytest

from src.statistical_jko.config.presets import get_preset, preset_names
from src.statistical_jko.core.exceptions import ConfigError
from src.statistical_jko.models.estimates import SchemeTag
from src.statistical_jko.models.run_config import ExperimentConfig, RunKind, load_config, parse_config


class TestParseConfig:
    """Validation of configuration mappings."""

    def test_defaults_are_reference_setup(self):
        cfg = parse_config({})
        assert cfg.experiment == RunKind.EMPTY
        assert cfg.grid.half_width == 5.0 and cfg.grid.intervals == 200
        assert cfg.time.horizon == 0.5 and cfg.time.steps == 50
        assert cfg.jko.delta == 0.01
        assert cfg.sampling.batch_size == 10 and cfg.sampling.eta == 1.0
        assert cfg.initial.variance == 1.44
        assert cfg.steps_needed == 50

    def test_hyphenated_experiment_id(self):
        assert parse_config({"experiment": "oracle-v1"}).experiment == RunKind.ORACLE_V1

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError) as info:
            parse_config({"grid": {"half_width": 5.0, "intervalls": 10}})
        assert "intervalls" in str(info.value)

    def test_bad_values_rejected(self):
        with pytest.raises(ConfigError):
            parse_config({"jko": {"delta": -0.1}})
        with pytest.raises(ConfigError):
            parse_config({"run": {"seed": 2**64}})
        with pytest.raises(ConfigError):
            parse_config({"bw": {"system": "pde"}})

    def test_figure_experiments_need_matching_steps(self):
        with pytest.raises(ConfigError):
            parse_config({"experiment": "fig1_density", "time": {"horizon": 0.5, "steps": 25}})
        cfg = parse_config({"experiment": "fig1_density", "time": {"horizon": 0.5, "steps": 50}})
        assert cfg.time.horizon / cfg.time.steps == pytest.approx(cfg.jko.delta)

    def test_jko_config(self):
        cfg = parse_config({"potential": {"beta": 2.0}, "grid": {"intervals": 40}})
        jko = cfg.jko_config()
        assert jko.beta == 2.0
        assert jko.grid.intervals == 40

    def test_config_hash_is_stable(self):
        a = parse_config({"run": {"seed": 3}})
        b = parse_config({"run": {"seed": 3}})
        c = parse_config({"run": {"seed": 4}})
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != c.config_hash()
        assert len(a.config_hash()) == 64

    def test_bw_defaults(self):
        cfg = parse_config({"bw": {"dim": 2, "mean": [0.5]}})
        assert cfg.bw.covariance().shape == (2, 2)
        assert list(cfg.bw.mean_vector()) == [0.5, 0.5]


class TestLoadConfig:
    """Reading TOML and JSON files."""

    def test_toml(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text('experiment = "estimate"\n\n[run]\nseed = 9\n\n[sampling]\nscheme = "per_batch"\n')
        cfg = load_config(path)
        assert cfg.experiment == RunKind.ESTIMATE
        assert cfg.run.seed == 9
        assert cfg.sampling.scheme == SchemeTag.PER_BATCH

    def test_json(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"experiment": "bw_run", "bw": {"dim": 1}}))
        assert load_config(path).experiment == RunKind.BW_RUN

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.toml")

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_top_level_must_be_table(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_config(path)


class TestPresets:
    """Named presets."""

    def test_every_preset_validates(self):
        for name in preset_names():
            assert isinstance(get_preset(name), ExperimentConfig)

    def test_reference_preset(self):
        cfg = get_preset("reference_ou")
        assert cfg.experiment == RunKind.EMPTY
        assert cfg.potential.id == "quadratic"

    def test_preset_pins_experiment(self):
        cfg = get_preset("prop53_variance")
        assert cfg.experiment == RunKind.PROP53_VARIANCE
        assert cfg.run.replications == 10_000

    def test_overrides_merge(self):
        cfg = get_preset("oracle_v1", {"limit": {"oracle_steps": 20}})
        assert cfg.limit.oracle_steps == 20
        assert cfg.limit.oracle_intervals == 400

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            get_preset("fig9")
