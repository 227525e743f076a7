"""Deterministic signal processing shared by training and evaluation.

EEG filtering/resampling, speech spectrograms, and mel-cepstral features.
All functions are pure; constants default to the values in the run config.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Callable

import numpy as np
import scipy.fft
import scipy.signal

from .errors import ConfigError, DataError
from .types import EegRecording, MccSequence, Spectrogram, SpeechUtterance

AUDIO_FS = 22050
EEG_FS = 256
FFT_SIZE = 1024
WIN_SIZE = 1024
HOP_SIZE = 256
N_MELS = 80
LOG_FLOOR = 1e-5
N_MCC_DEFAULT = 13


def _zero_phase_apply(
    samples: np.ndarray, sos: np.ndarray, fs: float, pad_mode: str = "even"
) -> np.ndarray:
    """Apply the forward-backward (squared-magnitude) response of an IIR filter.

    Implemented in the frequency domain with reflect padding, which keeps the
    operation exactly symmetric under time reversal. pad_mode "even" is the
    plain reflection (best for wide passbands); "odd" detrends to zero
    endpoints first and extends slope-continuously, which suppresses leakage
    into narrow stopbands. The removed trend is passed through at DC gain.
    """
    n = samples.shape[-1]
    pad = min(n - 1, 4096)
    pad_spec = [(0, 0)] * (samples.ndim - 1) + [(pad, pad)]
    if pad_mode == "odd":
        first = samples[..., :1]
        last = samples[..., -1:]
        trend = first + (last - first) * np.linspace(0.0, 1.0, n)
        padded = np.pad(samples - trend, pad_spec, mode="reflect", reflect_type="odd")
    else:
        trend = np.zeros_like(samples)
        padded = np.pad(samples, pad_spec, mode="reflect")
    m = padded.shape[-1]
    freqs = np.fft.rfftfreq(m, d=1.0 / fs)
    _, h = scipy.signal.sosfreqz(sos, worN=freqs, fs=fs)
    gain = np.abs(h) ** 2
    out = np.fft.irfft(np.fft.rfft(padded, axis=-1) * gain, n=m, axis=-1)
    return out[..., pad : pad + n] + trend * gain[0]


def notch_filter(x: EegRecording, freq: float = 60.0, q: float = 30.0) -> EegRecording:
    """Zero-phase notch, two cascaded biquads (4th order overall)."""
    if not 0 < freq < x.fs / 2:
        raise ConfigError(f"notch frequency {freq} Hz must lie in (0, fs/2)")
    b, a = scipy.signal.iirnotch(freq, q, fs=x.fs)
    sos_single = scipy.signal.tf2sos(b, a)
    sos = np.vstack([sos_single, sos_single])
    return x.with_samples(_zero_phase_apply(x.samples, sos, x.fs, pad_mode="odd"))


def bandpass_filter(x: EegRecording, lo: float = 0.5, hi: float = 50.0) -> EegRecording:
    """Zero-phase 4th-order Butterworth bandpass."""
    if not 0 < lo < hi < x.fs / 2:
        raise ConfigError(f"invalid band [{lo}, {hi}] Hz for fs={x.fs}")
    sos = scipy.signal.butter(4, [lo, hi], btype="bandpass", fs=x.fs, output="sos")
    return x.with_samples(_zero_phase_apply(x.samples, sos, x.fs))


def remove_eye_blinks(
    x: EegRecording, hook: Callable[[EegRecording], EegRecording] | None = None
) -> EegRecording:
    """Pluggable artifact-removal stage; identity unless a hook is supplied."""
    return hook(x) if hook is not None else x


def resample(signal: np.ndarray, fs_in: float, fs_out: float) -> np.ndarray:
    """Polyphase resampling along the last axis.

    Output length is round(n * fs_out / fs_in); channel count preserved.
    """
    if fs_in <= 0 or fs_out <= 0:
        raise ConfigError("sampling rates must be positive")
    signal = np.asarray(signal, dtype=np.float64)
    n_in = signal.shape[-1]
    target = int(round(n_in * fs_out / fs_in))
    if fs_out == fs_in:
        return signal.copy()
    frac = Fraction(fs_out / fs_in).limit_denominator(10000)
    out = scipy.signal.resample_poly(
        signal, frac.numerator, frac.denominator, axis=-1, padtype="line"
    )
    if out.shape[-1] > target:
        out = out[..., :target]
    elif out.shape[-1] < target:
        pad = target - out.shape[-1]
        out = np.concatenate([out, np.repeat(out[..., -1:], pad, axis=-1)], axis=-1)
    return out


def resample_recording(x: EegRecording, fs_out: float) -> EegRecording:
    return x.with_samples(resample(x.samples, x.fs, fs_out), fs=fs_out)


def preprocess_eeg(
    x: EegRecording,
    notch_hz: float = 60.0,
    notch_q: float = 30.0,
    band_lo: float = 0.5,
    band_hi: float = 50.0,
    fs_out: float = EEG_FS,
    blink_hook: Callable[[EegRecording], EegRecording] | None = None,
) -> EegRecording:
    """Full EEG chain: notch -> bandpass -> blink removal -> resample."""
    x = notch_filter(x, notch_hz, notch_q)
    x = bandpass_filter(x, band_lo, band_hi)
    x = remove_eye_blinks(x, blink_hook)
    if x.fs != fs_out:
        x = resample_recording(x, fs_out)
    return x


def n_frames_for_length(n_samples: int, hop_size: int = HOP_SIZE) -> int:
    """Frame count under center padding: floor(n / hop) + 1."""
    return n_samples // hop_size + 1


def _stft_magnitude(waveform: np.ndarray, fft_size: int, win_size: int, hop_size: int) -> np.ndarray:
    window = scipy.signal.get_window("hann", win_size, fftbins=True)
    pad = fft_size // 2
    padded = np.pad(waveform, (pad, pad), mode="reflect")
    n_frames = n_frames_for_length(len(waveform), hop_size)
    frames = np.stack(
        [padded[i * hop_size : i * hop_size + win_size] for i in range(n_frames)], axis=1
    )
    spec = np.fft.rfft(frames * window[:, None], n=fft_size, axis=0)
    return np.abs(spec)


def linear_spectrogram(
    u: SpeechUtterance,
    fft_size: int = FFT_SIZE,
    win_size: int = WIN_SIZE,
    hop_size: int = HOP_SIZE,
) -> Spectrogram:
    """Magnitude STFT with Hann window and reflect center padding."""
    if u.fs != AUDIO_FS:
        raise DataError(f"expected {AUDIO_FS} Hz audio, got {u.fs}; resample first")
    if len(u.waveform) < 2:
        raise DataError("waveform too short for spectrogram")
    mag = _stft_magnitude(u.waveform, fft_size, win_size, hop_size)
    return Spectrogram(
        values=mag, kind="linear", fft_size=fft_size, win_size=win_size,
        hop_size=hop_size, fs=u.fs,
    )


def _hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    mel = f / (200.0 / 3.0)
    log_region = f >= 1000.0
    mel = np.where(log_region, 15.0 + np.log(np.maximum(f, 1e-12) / 1000.0) / (np.log(6.4) / 27.0), mel)
    return mel


def _mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f = m * (200.0 / 3.0)
    log_region = m >= 15.0
    f = np.where(log_region, 1000.0 * np.exp((m - 15.0) * (np.log(6.4) / 27.0)), f)
    return f


def mel_filterbank(
    fs: float = AUDIO_FS,
    fft_size: int = FFT_SIZE,
    n_mels: int = N_MELS,
    fmin: float = 0.0,
    fmax: float | None = None,
) -> np.ndarray:
    """Slaney-style triangular filterbank [n_mels, fft_size//2 + 1], area-normalized."""
    if fmax is None:
        fmax = fs / 2.0
    n_bins = fft_size // 2 + 1
    fft_freqs = np.linspace(0, fs / 2.0, n_bins)
    mel_pts = np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    weights = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lower, center, upper = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (fft_freqs - lower) / max(center - lower, 1e-12)
        down = (upper - fft_freqs) / max(upper - center, 1e-12)
        weights[i] = np.maximum(0.0, np.minimum(up, down))
        # Slaney area normalization: each filter integrates to ~constant energy
        weights[i] *= 2.0 / (upper - lower)
    return weights


def mel_spectrogram(
    u: SpeechUtterance,
    fft_size: int = FFT_SIZE,
    win_size: int = WIN_SIZE,
    hop_size: int = HOP_SIZE,
    n_mels: int = N_MELS,
    log_floor: float = LOG_FLOOR,
) -> Spectrogram:
    """Log-compressed mel spectrogram of the linear magnitude STFT."""
    linear = linear_spectrogram(u, fft_size, win_size, hop_size)
    fb = mel_filterbank(u.fs, fft_size, n_mels)
    mel = fb @ linear.values
    logmel = np.log(np.maximum(mel, log_floor))
    return Spectrogram(
        values=logmel, kind="log-mel", fft_size=fft_size, win_size=win_size,
        hop_size=hop_size, fs=u.fs, n_mels=n_mels,
    )


def mcc_from_mel(m: Spectrogram, n_mcc: int = N_MCC_DEFAULT) -> MccSequence:
    """Orthonormal DCT-II of log-mel frames; keeps coefficients 1..n_mcc."""
    if m.kind != "log-mel":
        raise ConfigError("mcc_from_mel expects a log-mel spectrogram")
    n_mels = m.n_bins
    if not 1 <= n_mcc < n_mels:
        raise ConfigError(f"n_mcc={n_mcc} must lie in [1, {n_mels - 1}]")
    cepstra = scipy.fft.dct(m.values, type=2, norm="ortho", axis=0)
    return MccSequence(coeffs=cepstra[1 : n_mcc + 1], n_mcc=n_mcc)
