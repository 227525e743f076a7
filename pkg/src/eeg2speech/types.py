"""Core data containers passed between pipeline stages."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class EegRecording:
    """Multichannel EEG time series.

    samples is [n_channels, n_timesteps]; channel labels must be unique.
    """

    samples: np.ndarray
    fs: float
    channel_labels: list[str]
    subject_id: str = ""
    stimulus_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise DataError("EEG samples must be 2-D [channels, time]")
        if self.samples.shape[0] < 1:
            raise DataError("EEG must have at least one channel")
        if self.fs <= 0:
            raise DataError("sampling rate must be positive")
        if len(self.channel_labels) != self.samples.shape[0]:
            raise DataError("channel label count does not match channel axis")
        if len(set(self.channel_labels)) != len(self.channel_labels):
            raise DataError("channel labels must be unique")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("EEG samples must be finite")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_timesteps(self) -> int:
        return self.samples.shape[1]

    def with_samples(self, samples: np.ndarray, fs: float | None = None) -> "EegRecording":
        return EegRecording(
            samples=samples,
            fs=self.fs if fs is None else fs,
            channel_labels=list(self.channel_labels),
            subject_id=self.subject_id,
            stimulus_id=self.stimulus_id,
        )


@dataclass
class PhonemeAlignment:
    """Phoneme intervals in seconds, non-overlapping and increasing."""

    entries: list[tuple[str, float, float]]

    def __post_init__(self):
        prev_end = 0.0
        for label, start, end in self.entries:
            if end <= start:
                raise DataError(f"alignment interval for {label!r} has end <= start")
            if start < prev_end - 1e-9:
                raise DataError("alignment intervals overlap or are out of order")
            prev_end = end


@dataclass
class SpeechUtterance:
    """Mono speech waveform plus transcript and optional alignment."""

    waveform: np.ndarray
    fs: float
    transcript: str = ""
    alignment: PhonemeAlignment | None = None

    def __post_init__(self):
        self.waveform = np.asarray(self.waveform, dtype=np.float64).reshape(-1)
        if self.fs <= 0:
            raise DataError("sampling rate must be positive")
        if not np.all(np.isfinite(self.waveform)):
            raise DataError("waveform must be finite")

    @property
    def duration(self) -> float:
        return len(self.waveform) / self.fs


@dataclass
class Spectrogram:
    """Time-frequency matrix [n_bins, n_frames], linear magnitude or log-mel."""

    values: np.ndarray
    kind: str  # "linear" or "log-mel"
    fft_size: int
    win_size: int
    hop_size: int
    fs: float
    n_mels: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError("spectrogram values must be 2-D [bins, frames]")
        if self.kind not in ("linear", "log-mel"):
            raise DataError(f"unknown spectrogram kind {self.kind!r}")

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class MccSequence:
    """Mel-cepstral coefficients [n_mcc, n_frames] (0th energy term excluded)."""

    coeffs: np.ndarray
    n_mcc: int

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape[0] != self.n_mcc:
            raise DataError("coefficient count does not match n_mcc")
        if not np.all(np.isfinite(self.coeffs)):
            raise DataError("MCC values must be finite")
