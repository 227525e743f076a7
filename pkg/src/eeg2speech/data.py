"""Dataset manifests, unseen splits, synthetic paired EEG/speech, batching.

The synthetic generator produces speech-like multi-tone audio and EEG that is
a subject-specific positive mixture of the audio envelope plus noise, so the
two modalities share information by construction. Files are plain WAV plus
raw little-endian float32 EEG with a JSON sidecar.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.io.wavfile
import torch

from . import dsp
from .config import DataConfig
from .errors import DataError
from .types import EegRecording, SpeechUtterance

SPLITS = ("train", "unseen-audio", "unseen-subject", "unseen-both")

# Tiny vocabulary with part-of-speech tags; nouns drive the word-spotting probe.
WORD_LEXICON = {
    "dog": "noun", "cat": "noun", "tree": "noun", "house": "noun",
    "river": "noun", "stone": "noun", "bird": "noun", "cloud": "noun",
    "road": "noun", "light": "noun",
    "the": "det", "a": "det", "runs": "verb", "sees": "verb", "falls": "verb",
    "near": "prep", "over": "prep", "under": "prep", "big": "adj", "small": "adj",
}
NOUNS = tuple(sorted(w for w, pos in WORD_LEXICON.items() if pos == "noun"))

_REGION_PREFIXES = ("F", "C", "T", "P", "O")


def default_channel_labels(n_channels: int) -> list[str]:
    """Deterministic scalp-style labels cycling frontal/central/temporal/parietal/occipital."""
    return [
        f"{_REGION_PREFIXES[i % len(_REGION_PREFIXES)]}{i // len(_REGION_PREFIXES) + 1}"
        for i in range(n_channels)
    ]


@dataclass(frozen=True)
class ManifestRow:
    subject_id: str
    stimulus_id: str
    eeg_path: str
    audio_path: str
    transcript: str
    split: str = "train"


@dataclass
class Manifest:
    rows: list[ManifestRow]
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)
        seen = set()
        for row in self.rows:
            key = (row.subject_id, row.stimulus_id)
            if key in seen:
                raise DataError(f"duplicate manifest row for {key}")
            seen.add(key)
            if row.split not in SPLITS:
                raise DataError(f"row {key}: unknown split {row.split!r}")

    def subset(self, split: str) -> list[ManifestRow]:
        if split not in SPLITS:
            raise DataError(f"unknown split {split!r}")
        return [r for r in self.rows if r.split == split]

    def subjects(self) -> list[str]:
        return sorted({r.subject_id for r in self.rows})

    def stimuli(self) -> list[str]:
        return sorted({r.stimulus_id for r in self.rows})


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["subject_id", "stimulus_id", "eeg_path", "audio_path", "transcript", "split"]
        )
        for r in manifest.rows:
            writer.writerow(
                [r.subject_id, r.stimulus_id, r.eeg_path, r.audio_path, r.transcript, r.split]
            )


def load_manifest(path: str | Path, check_paths: bool = True) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    root = path.parent
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"subject_id", "stimulus_id", "eeg_path", "audio_path", "transcript", "split"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise DataError(f"manifest {path} has wrong header: {reader.fieldnames}")
        for rec in reader:
            rows.append(ManifestRow(**rec))
    manifest = Manifest(rows=rows, root=root)
    if check_paths:
        for r in manifest.rows:
            for p in (root / r.eeg_path, root / r.audio_path):
                if not p.exists():
                    raise DataError(
                        f"row ({r.subject_id}, {r.stimulus_id}): missing file {p}"
                    )
    return manifest


def build_splits(
    manifest: Manifest,
    held_out_subjects: int | list[str],
    held_out_stimuli: int | list[str],
) -> Manifest:
    """Label rows train / unseen-audio / unseen-subject / unseen-both.

    Integer arguments hold out that many ids from the end of the sorted id
    list; explicit id lists are validated against the manifest.
    """
    subjects = manifest.subjects()
    stimuli = manifest.stimuli()

    def resolve(held, pool, what):
        if isinstance(held, int):
            if not 0 <= held < len(pool):
                raise DataError(
                    f"cannot hold out {held} of {len(pool)} {what}; need 0 <= k < total"
                )
            return set(pool[len(pool) - held :])
        held = set(held)
        unknown = held - set(pool)
        if unknown:
            raise DataError(f"held-out {what} not in manifest: {sorted(unknown)}")
        if len(held) >= len(pool):
            raise DataError(f"holding out all {what} leaves no training data")
        return held

    ho_subj = resolve(held_out_subjects, subjects, "subjects")
    ho_stim = resolve(held_out_stimuli, stimuli, "stimuli")

    rows = []
    for r in manifest.rows:
        s, t = r.subject_id in ho_subj, r.stimulus_id in ho_stim
        split = ("unseen-both" if s and t else "unseen-subject" if s
                 else "unseen-audio" if t else "train")
        rows.append(replace(r, split=split))
    return Manifest(rows=rows, root=manifest.root)


def write_eeg(path: str | Path, rec: EegRecording) -> None:
    """Raw little-endian float32 [channels, time] plus a JSON sidecar."""
    path = Path(path)
    rec.samples.astype("<f4").tofile(path)
    sidecar = {
        "fs": rec.fs,
        "channels": rec.channel_labels,
        "subject": rec.subject_id,
        "stimulus": rec.stimulus_id,
    }
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)


def read_eeg(path: str | Path) -> EegRecording:
    path = Path(path)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    try:
        with open(sidecar_path) as fh:
            meta = json.load(fh)
        flat = np.fromfile(path, dtype="<f4")
        n_channels = len(meta["channels"])
        if n_channels == 0 or flat.size % n_channels != 0:
            raise DataError(
                f"EEG file {path} length {flat.size} not divisible by {n_channels} channels"
            )
        samples = flat.reshape(n_channels, -1).astype(np.float64)
        return EegRecording(
            samples=samples, fs=float(meta["fs"]), channel_labels=list(meta["channels"]),
            subject_id=str(meta.get("subject", "")), stimulus_id=str(meta.get("stimulus", "")),
        )
    except DataError:
        raise
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read EEG file {path}: {exc}") from exc


def write_audio(path: str | Path, utt: SpeechUtterance) -> None:
    pcm = np.clip(utt.waveform, -1.0, 1.0)
    scipy.io.wavfile.write(str(path), int(utt.fs), (pcm * 32767.0).astype("<i2"))


def read_audio(path: str | Path) -> SpeechUtterance:
    try:
        fs, pcm = scipy.io.wavfile.read(str(path))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read audio file {path}: {exc}") from exc
    if pcm.ndim != 1:
        raise DataError(f"audio file {path} must be mono")
    if pcm.dtype == np.int16:
        wav = pcm.astype(np.float64) / 32767.0
    else:
        wav = pcm.astype(np.float64)
    return SpeechUtterance(waveform=wav, fs=float(fs))


def audio_envelope(waveform: np.ndarray, fs: float, smooth_sec: float = 0.05) -> np.ndarray:
    """Rectified, moving-average-smoothed amplitude envelope."""
    win = max(1, int(round(smooth_sec * fs)))
    kernel = np.ones(win) / win
    return np.convolve(np.abs(waveform), kernel, mode="same")


def _stimulus_rng(seed: int, *indices: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *indices]))


def _synth_audio(rng: np.random.Generator, duration: float, fs: int):
    """Speech-like multi-tone audio: one voiced burst per word, brief gaps."""
    n_words = int(rng.integers(2, 5))
    words = [str(rng.choice(list(WORD_LEXICON))) for _ in range(n_words)]
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    wav = np.zeros(n)
    edges = np.linspace(0.0, duration, n_words + 1)
    for k in range(n_words):
        start, end = edges[k], edges[k + 1]
        seg = (t >= start) & (t < end - 0.05 * (end - start))
        f0 = float(rng.uniform(120.0, 320.0))
        local = t[seg] - start
        env = np.sin(np.pi * np.clip(local / max(local[-1], 1e-6), 0, 1)) ** 2 if seg.any() else 0
        tone = np.zeros(int(seg.sum()))
        for harmonic, amp in ((1, 1.0), (2, 0.5), (3, 0.25)):
            tone += amp * np.sin(2 * np.pi * f0 * harmonic * local + rng.uniform(0, 2 * np.pi))
        wav[seg] = env * tone
    wav += 0.01 * rng.standard_normal(n)
    wav *= 0.8 / max(np.max(np.abs(wav)), 1e-9)
    return wav, " ".join(words)


def _synth_eeg(
    rng: np.random.Generator, audio: np.ndarray, audio_fs: int, eeg_fs: int,
    n_channels: int, mixing: np.ndarray,
) -> np.ndarray:
    """Subject-mixed envelope drive plus per-channel noise; [channels, time]."""
    n_eeg = int(round(len(audio) * eeg_fs / audio_fs))
    env = audio_envelope(audio, audio_fs)
    env_eeg = dsp.resample(env, audio_fs, eeg_fs)[:n_eeg]
    env_eeg = env_eeg - env_eeg.mean()
    denv = np.gradient(env_eeg)
    denv = denv / max(denv.std(), 1e-9) * max(env_eeg.std(), 1e-9)
    drive = mixing[:, :1] * env_eeg[None, :] + mixing[:, 1:2] * denv[None, :]
    noise = 0.5 * env_eeg.std() * rng.standard_normal((n_channels, n_eeg))
    return drive + noise


def generate_synthetic(cfg: DataConfig, out_dir: str | Path) -> Path:
    """Write paired synthetic EEG/audio files plus a split-labeled manifest.

    Deterministic given cfg.synth_seed: per-(subject, stimulus) RNG streams
    are derived from the seed and indices, independent of generation order.
    Returns the manifest path.
    """
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    (out_dir / "eeg").mkdir(parents=True, exist_ok=True)
    audio_fs = 22050
    labels = default_channel_labels(cfg.eeg_channels)

    subjects = [f"S{i + 1:02d}" for i in range(cfg.n_subjects)]
    stimuli = [f"U{j + 1:03d}" for j in range(cfg.n_stimuli)]

    # envelope weight dominates so channel/envelope correlation stays high
    mixings = {
        s: np.column_stack([
            _stimulus_rng(cfg.synth_seed, i).uniform(0.8, 1.5, cfg.eeg_channels),
            _stimulus_rng(cfg.synth_seed, i).uniform(-0.2, 0.2, cfg.eeg_channels),
        ])
        for i, s in enumerate(subjects)
    }

    rows = []
    for j, stim in enumerate(stimuli):
        rng_a = _stimulus_rng(cfg.synth_seed, 10_000 + j)
        duration = float(rng_a.uniform(cfg.min_duration, cfg.max_duration))
        wav, transcript = _synth_audio(rng_a, duration, audio_fs)
        audio_rel = f"audio/{stim}.wav"
        write_audio(out_dir / audio_rel, SpeechUtterance(wav, audio_fs, transcript))
        for i, subj in enumerate(subjects):
            rng_e = _stimulus_rng(cfg.synth_seed, 20_000 + i, j)
            samples = _synth_eeg(
                rng_e, wav, audio_fs, cfg.eeg_raw_fs, cfg.eeg_channels, mixings[subj]
            )
            eeg_rel = f"eeg/{subj}_{stim}.f32"
            write_eeg(
                out_dir / eeg_rel,
                EegRecording(samples, cfg.eeg_raw_fs, labels, subj, stim),
            )
            rows.append(ManifestRow(subj, stim, eeg_rel, audio_rel, transcript))

    manifest = Manifest(rows=rows, root=out_dir)
    manifest = build_splits(manifest, cfg.held_out_subjects, cfg.held_out_stimuli)
    manifest_path = out_dir / "manifest.csv"
    save_manifest(manifest, manifest_path)
    return manifest_path


@dataclass
class Batch:
    """Padded training batch with per-item valid lengths and frame masks."""

    eeg: torch.Tensor          # [B, C, T_eeg] preprocessed to the model rate
    eeg_lengths: torch.Tensor  # [B]
    spec: torch.Tensor         # [B, fft//2+1, F]
    frame_mask: torch.Tensor   # [B, F] 1 where frames are valid
    wav: torch.Tensor          # [B, T_wav]
    wav_lengths: torch.Tensor  # [B]
    rows: list[ManifestRow]


def load_batch(
    rows: list[ManifestRow],
    root: str | Path,
    eeg_fs: int = dsp.EEG_FS,
    preprocess: bool = True,
) -> Batch:
    """Read, preprocess, and pad one batch of manifest rows."""
    if not rows:
        raise DataError("empty batch")
    root = Path(root)
    eegs, wavs, specs = [], [], []
    for r in rows:
        try:
            rec = read_eeg(root / r.eeg_path)
            utt = read_audio(root / r.audio_path)
        except DataError as exc:
            raise DataError(f"row ({r.subject_id}, {r.stimulus_id}): {exc}") from exc
        if preprocess:
            rec = dsp.preprocess_eeg(rec, fs_out=eeg_fs)
        eegs.append(rec.samples.astype(np.float32))
        wavs.append(utt.waveform.astype(np.float32))
        specs.append(dsp.linear_spectrogram(utt).values.astype(np.float32))

    def pad_stack(arrs, time_axis=-1):
        n = max(a.shape[time_axis] for a in arrs)
        out = []
        for a in arrs:
            width = [(0, 0)] * a.ndim
            width[time_axis] = (0, n - a.shape[time_axis])
            out.append(np.pad(a, width))
        return torch.tensor(np.stack(out))

    frame_counts = [s.shape[1] for s in specs]
    max_frames = max(frame_counts)
    frame_mask = torch.zeros(len(rows), max_frames)
    for i, f in enumerate(frame_counts):
        frame_mask[i, :f] = 1.0
    return Batch(
        eeg=pad_stack(eegs),
        eeg_lengths=torch.tensor([e.shape[1] for e in eegs]),
        spec=pad_stack(specs),
        frame_mask=frame_mask,
        wav=pad_stack(wavs),
        wav_lengths=torch.tensor([len(w) for w in wavs]),
        rows=list(rows),
    )


def shuffled_rows(rows: list[ManifestRow], seed: int) -> list[ManifestRow]:
    """Deterministic shuffle for single-worker epoch iteration."""
    order = np.random.default_rng(seed).permutation(len(rows))
    return [rows[i] for i in order]
