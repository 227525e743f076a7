import pytest

from eeg2speech.config import (
    RunConfig,
    apply_overrides,
    config_from_dict,
    config_hash,
    load_config,
    save_config,
)
from eeg2speech.errors import ConfigError


def test_defaults_construct():
    cfg = RunConfig()
    assert cfg.train.config_name == "vanilla"
    assert cfg.speech.hop_size == 256


def test_yaml_round_trip(tmp_path):
    cfg = RunConfig()
    save_config(cfg, tmp_path / "c.yaml")
    again = load_config(tmp_path / "c.yaml")
    assert config_hash(again) == config_hash(cfg)


def test_override_changes_value_and_hash():
    cfg = RunConfig()
    new = apply_overrides(cfg, ["train.lr=1e-3", "eeg.dropout=0.0"])
    assert new.train.lr == 1e-3
    assert new.eeg.dropout == 0.0
    assert config_hash(new) != config_hash(cfg)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["train.learning_rate=1e-3"])
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["nonsense.lr=1"])
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["no-equals-sign"])


def test_unknown_config_name_rejected():
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["train.config_name=banana"])


def test_unknown_section_key_in_file(tmp_path):
    (tmp_path / "c.yaml").write_text("train:\n  lr: 0.001\n  bogus: 1\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.yaml")


def test_cross_module_dims_validated():
    with pytest.raises(ConfigError):
        config_from_dict({"connector": {"latent_dim": 8}})
