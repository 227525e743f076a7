"""Run configuration: hierarchical dataclasses, YAML round-trip, overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .connector import ConnectorConfig
from .eeg_net import EegEncoderConfig
from .errors import ConfigError
from .speech_net import SpeechConfig

CONFIG_NAMES = ("vanilla", "pt-audio", "pt-audio-fz", "pt-audio-eeg", "pt-audio-eeg-fz")


@dataclass
class DspConfig:
    audio_fs: int = 22050
    eeg_fs: int = 256
    fft_size: int = 1024
    win_size: int = 1024
    hop_size: int = 256
    n_mels: int = 80
    log_floor: float = 1e-5
    n_mcc: int = 13
    mcc_include_c0: bool = False
    notch_hz: float = 60.0
    notch_q: float = 30.0
    band_lo: float = 0.5
    band_hi: float = 50.0


@dataclass
class TrainConfig:
    config_name: str = "vanilla"
    lr: float = 2e-4
    betas: tuple[float, float] = (0.8, 0.99)
    weight_decay: float = 0.01
    lr_decay: float = 0.999875
    max_iterations: int = 2000
    batch_size: int = 4
    seed: int = 1234
    checkpoint_every: int = 500
    log_every: int = 50
    eeg_loss_weight: float = 1.0
    temperature: float = 0.667
    pretrained_speech: str = ""
    pretrained_eeg: str = ""

    def __post_init__(self):
        if self.config_name not in CONFIG_NAMES:
            raise ConfigError(
                f"unknown config_name {self.config_name!r}; expected one of {CONFIG_NAMES}"
            )
        self.betas = tuple(self.betas)


@dataclass
class DataConfig:
    manifest: str = ""
    n_subjects: int = 4
    n_stimuli: int = 24
    eeg_channels: int = 16
    eeg_raw_fs: int = 512
    min_duration: float = 1.0
    max_duration: float = 2.0
    held_out_subjects: int = 1
    held_out_stimuli: int = 4
    synth_seed: int = 7


@dataclass
class RunConfig:
    dsp: DspConfig = field(default_factory=DspConfig)
    eeg: EegEncoderConfig = field(default_factory=EegEncoderConfig)
    speech: SpeechConfig = field(default_factory=SpeechConfig)
    connector: ConnectorConfig = field(default_factory=ConnectorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if self.connector.embed_dim != self.eeg.embed_dim:
            raise ConfigError("connector.embed_dim must equal eeg.embed_dim")
        if self.connector.latent_dim != self.speech.latent_dim:
            raise ConfigError("connector.latent_dim must equal speech.latent_dim")


def _from_dict(cls, data: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = known[name].type
        if dataclasses.is_dataclass(_resolve(cls, name)):
            kwargs[name] = _from_dict(_resolve(cls, name), value)
        else:
            kwargs[name] = value
        del ftype
    return cls(**kwargs)


def _resolve(cls, name):
    for f in fields(cls):
        if f.name == name:
            default = f.default_factory() if f.default_factory is not dataclasses.MISSING else None
            return type(default) if default is not None else None
    return None


def config_from_dict(data: dict) -> RunConfig:
    return _from_dict(RunConfig, data or {})


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path: str | Path) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    return config_from_dict(data)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        return obj

    with open(path, "w") as fh:
        yaml.safe_dump(clean(config_to_dict(cfg)), fh, sort_keys=True)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply dotted-key overrides like train.lr=1e-3 and return a new config."""
    data = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config section {key!r}")
            node = node[part]
        leaf = parts[-1]
        if leaf not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[leaf] = _parse_scalar(raw)
    return config_from_dict(data)


def _parse_scalar(raw: str):
    value = yaml.safe_load(raw)
    if isinstance(value, str):
        # YAML 1.1 misses exponent floats without a dot, e.g. "1e-3"
        try:
            return float(value)
        except ValueError:
            return value
    return value


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
