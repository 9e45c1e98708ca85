"""
Tests for configuration module.
"""

import json

import pytest

from patrack.config import (
    RunConfig,
    Settings,
    dump_run_config,
    get_settings,
    load_run_config,
    parse_run_config,
    write_config_echo,
)
from patrack.exceptions import ConfigurationException, StorageException


class TestSettings:
    """Process settings from PATRACK_* variables."""

    def test_defaults(self, monkeypatch):
        monkeypatch.delenv("PATRACK_THREADS", raising=False)
        settings = Settings()
        assert settings.threads == 1
        assert settings.log_level == "INFO"
        assert settings.debug_numerics is False

    def test_env_prefix(self, monkeypatch):
        monkeypatch.setenv("PATRACK_THREADS", "4")
        monkeypatch.setenv("PATRACK_LOG_JSON", "true")
        settings = Settings()
        assert settings.threads == 4
        assert settings.log_json is True

    def test_cached(self):
        assert get_settings() is get_settings()


class TestRunConfig:
    """Run document parsing."""

    def test_defaults(self):
        config = RunConfig()
        assert config.backbone.layers == 12
        assert config.adapters.dims == {"mda": 8, "cea": 8, "ha": 8}
        assert config.train.lr == 4e-4
        assert config.eval.precision_threshold == 20.0

    def test_missing_file_means_defaults(self):
        assert load_run_config(None) == RunConfig()

    def test_unknown_key_names_path(self):
        with pytest.raises(ConfigurationException) as exc:
            parse_run_config({"train": {"learning_rate": 0.1}})
        assert exc.value.details["key"] == "train.learning_rate"
        assert exc.value.exit_code == 2

    def test_out_of_range_value(self):
        with pytest.raises(ConfigurationException) as exc:
            parse_run_config({"train": {"lr_decay_ratio": 1.5}})
        assert exc.value.details["key"] == "train.lr_decay_ratio"

    def test_schedule_override_keys(self):
        with pytest.raises(ConfigurationException):
            parse_run_config({"adapters": {"schedule_override": {"0": "MDA"}}})

    def test_every_mda_branch_disabled(self):
        ablation = {"mda_use_avg": False, "mda_use_max": False, "mda_use_dwconv": False}
        with pytest.raises(ConfigurationException):
            parse_run_config({"adapters": {"ablation": ablation}})

    def test_preset_dims(self):
        assert parse_run_config({"adapters": {"preset": "large"}}).adapters.dims["cea"] == 192

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"backbone": {"layers": 3}, "adapters": {"schedule": "none"}}))
        config = load_run_config(path)
        assert config.backbone.layers == 3
        assert config.adapters.schedule == "none"

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{not json")
        with pytest.raises(ConfigurationException):
            load_run_config(path)

    def test_top_level_must_be_object(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigurationException):
            load_run_config(path)

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(StorageException) as exc:
            load_run_config(tmp_path / "absent.json")
        assert exc.value.exit_code == 3


class TestConfigEcho:
    def test_echo_round_trips(self, tiny_run_config, tmp_path):
        target = write_config_echo(tiny_run_config, tmp_path / "out")
        assert target.name == "config.json"
        assert load_run_config(target) == tiny_run_config

    def test_dump_is_canonical(self, tiny_run_config):
        text = dump_run_config(tiny_run_config)
        assert text.endswith("\n")
        assert text == dump_run_config(parse_run_config(json.loads(text)))
