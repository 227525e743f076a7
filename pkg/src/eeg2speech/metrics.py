"""Objective evaluation: MCD, mel-spectrogram correlation, phoneme-level
grouped analysis, channel-region ablation, and the keyword-spotting probe."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from pathlib import Path

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import f1_score

from . import dsp
from .data import WORD_LEXICON
from .errors import ConfigError, DataError
from .types import EegRecording, MccSequence, PhonemeAlignment, SpeechUtterance

ALPHA = 10.0 * math.sqrt(2.0) / math.log(10.0)

DEFAULT_REGION_PREFIXES = {
    "frontal": "F",
    "central": "C",
    "temporal": "T",
    "parietal": "P",
    "occipital": "O",
}


def _per_frame_distances(ref: MccSequence, gen: MccSequence) -> np.ndarray:
    if ref.n_mcc != gen.n_mcc:
        raise ConfigError(f"MCC order mismatch: {ref.n_mcc} vs {gen.n_mcc}")
    n = min(ref.coeffs.shape[1], gen.coeffs.shape[1])
    if n == 0:
        raise DataError("cannot compute MCD over zero frames")
    diff = ref.coeffs[:, :n] - gen.coeffs[:, :n]
    return ALPHA * np.sqrt(np.sum(diff ** 2, axis=0))


def mcd_from_mcc(ref: MccSequence, gen: MccSequence) -> float:
    """Mel-cepstral distortion in dB, averaged over frames."""
    return float(np.mean(_per_frame_distances(ref, gen)))


def _mcc(u: SpeechUtterance, n_mcc: int) -> MccSequence:
    return dsp.mcc_from_mel(dsp.mel_spectrogram(u), n_mcc=n_mcc)


def mcd(ref: SpeechUtterance, gen: SpeechUtterance, n_mcc: int = dsp.N_MCC_DEFAULT) -> float:
    return mcd_from_mcc(_mcc(ref, n_mcc), _mcc(gen, n_mcc))


def _pearson_percent(a: np.ndarray, b: np.ndarray) -> float:
    a = a.reshape(-1) - a.mean()
    b = b.reshape(-1) - b.mean()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        raise DataError("correlation undefined: an input has zero variance")
    return float(100.0 * np.dot(a, b) / denom)


def mel_corr(ref: SpeechUtterance, gen: SpeechUtterance) -> float:
    """Pearson correlation between log-mel spectrograms, in percent."""
    ref_mel = dsp.mel_spectrogram(ref).values
    gen_mel = dsp.mel_spectrogram(gen).values
    n = min(ref_mel.shape[1], gen_mel.shape[1])
    if n == 0:
        raise DataError("cannot compute Mel-Corr over zero frames")
    return _pearson_percent(ref_mel[:, :n], gen_mel[:, :n])


def confidence_interval(values) -> tuple[float, float]:
    """(mean, 1.96 * standard error); half-width 0 for fewer than two values."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise DataError("cannot aggregate zero values")
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(1.96 * arr.std(ddof=1) / math.sqrt(arr.size))


@dataclass
class MetricReport:
    """Per-utterance metrics for one evaluation split, with 95% CIs."""

    split: str
    mcd_values: list[float] = field(default_factory=list)
    mel_corr_values: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        mcd_mean, mcd_ci = confidence_interval(self.mcd_values)
        mc_mean, mc_ci = confidence_interval(self.mel_corr_values)
        return {
            "split": self.split, "n": len(self.mcd_values),
            "mcd_mean": mcd_mean, "mcd_ci": mcd_ci,
            "mel_corr_mean": mc_mean, "mel_corr_ci": mc_ci,
        }


# --------------------------------------------------------------------------
# phoneme-level analysis


def load_phoneme_groups(path: str | Path | None = None) -> dict:
    """Phoneme attribute table; a data file so conventions can be corrected."""
    if path is None:
        ref = importlib_resources.files("eeg2speech") / "resources/phoneme_groups.json"
        table = json.loads(ref.read_text())
    else:
        with open(path) as fh:
            table = json.load(fh)
    return {**table["consonants"], **table["vowels"]}


def normalize_phoneme(label: str) -> str:
    """Uppercase ARPABET label with stress digits stripped (AH0 -> AH)."""
    return re.sub(r"\d+$", "", label.strip().upper())


GROUP_AXES = ("manner", "place", "tenseness", "height", "frontness")


def phoneme_report(
    items: list[tuple[SpeechUtterance, SpeechUtterance, PhonemeAlignment]],
    table: dict | None = None,
    n_mcc: int = dsp.N_MCC_DEFAULT,
    hop_size: int = dsp.HOP_SIZE,
) -> dict:
    """Per-phoneme-group MCD and Mel-Corr across utterance pairs.

    A frame belongs to a phoneme when its center time i*hop/fs falls in
    [start, end). Group MCD pools per-frame distances weighted by frame
    count, so a single all-covering group reproduces the whole-utterance
    value. Unmapped phonemes are tallied, not rejected.
    """
    if table is None:
        table = load_phoneme_groups()
    acc: dict[str, dict[str, dict]] = {axis: {} for axis in GROUP_AXES}
    unmapped: dict[str, int] = {}

    for ref, gen, alignment in items:
        ref_mel = dsp.mel_spectrogram(ref)
        gen_mel = dsp.mel_spectrogram(gen)
        ref_mcc = dsp.mcc_from_mel(ref_mel, n_mcc=n_mcc)
        gen_mcc = dsp.mcc_from_mel(gen_mel, n_mcc=n_mcc)
        n = min(ref_mcc.coeffs.shape[1], gen_mcc.coeffs.shape[1])
        dists = _per_frame_distances(ref_mcc, gen_mcc)
        centers = np.arange(n) * hop_size / ref.fs

        for label, start, end in alignment.entries:
            phoneme = normalize_phoneme(label)
            frames = np.nonzero((centers >= start) & (centers < end))[0]
            if frames.size == 0:
                continue  # shorter than one frame
            attrs = table.get(phoneme)
            if attrs is None:
                unmapped[phoneme] = unmapped.get(phoneme, 0) + 1
                continue
            for axis, group in attrs.items():
                if group is None:
                    continue
                cell = acc[axis].setdefault(
                    group,
                    {"dist_sum": 0.0, "n_frames": 0, "n_segments": 0,
                     "ref_cols": [], "gen_cols": []},
                )
                cell["dist_sum"] += float(dists[frames].sum())
                cell["n_frames"] += int(frames.size)
                cell["n_segments"] += 1
                cell["ref_cols"].append(ref_mel.values[:, frames])
                cell["gen_cols"].append(gen_mel.values[:, frames])

    report: dict = {axis: {} for axis in GROUP_AXES}
    for axis, groups in acc.items():
        for group, cell in groups.items():
            pooled_ref = np.concatenate(cell["ref_cols"], axis=1)
            pooled_gen = np.concatenate(cell["gen_cols"], axis=1)
            try:
                corr = _pearson_percent(pooled_ref, pooled_gen)
            except DataError:
                corr = None
            report[axis][group] = {
                "mcd": cell["dist_sum"] / cell["n_frames"],
                "mel_corr": corr,
                "n_frames": cell["n_frames"],
                "n_segments": cell["n_segments"],
            }
    report["unmapped"] = unmapped
    return report


# --------------------------------------------------------------------------
# channel ablation


def channel_subset(
    x: EegRecording,
    regions,
    region_map: dict[str, list[str]] | None = None,
) -> EegRecording:
    """Restrict a recording to the channels of the named scalp regions.

    By default a channel belongs to the region whose label prefix it carries
    (F/C/T/P/O); an explicit region -> labels map overrides this.
    """
    regions = set(regions)
    if region_map is None:
        unknown = regions - set(DEFAULT_REGION_PREFIXES)
        if unknown:
            raise ConfigError(f"unknown regions: {sorted(unknown)}")
        prefixes = tuple(DEFAULT_REGION_PREFIXES[r] for r in regions)
        keep = [i for i, lbl in enumerate(x.channel_labels) if lbl.startswith(prefixes)]
    else:
        unknown = regions - set(region_map)
        if unknown:
            raise ConfigError(f"unknown regions: {sorted(unknown)}")
        wanted = {lbl for r in regions for lbl in region_map[r]}
        keep = [i for i, lbl in enumerate(x.channel_labels) if lbl in wanted]
    if not keep:
        raise ConfigError(f"channel selection for regions {sorted(regions)} is empty")
    return EegRecording(
        samples=x.samples[keep],
        fs=x.fs,
        channel_labels=[x.channel_labels[i] for i in keep],
        subject_id=x.subject_id,
        stimulus_id=x.stimulus_id,
    )


def performance_drop(full: float, subset: float, higher_is_better: bool = True) -> float:
    """Percent degradation of a metric when moving from full to subset channels."""
    if full == 0:
        raise DataError("cannot compute percent drop relative to a zero baseline")
    delta = (full - subset) if higher_is_better else (subset - full)
    return float(100.0 * delta / abs(full))


# --------------------------------------------------------------------------
# word-spotting probe


def top_nouns(transcripts, lexicon: dict[str, str] = WORD_LEXICON, n: int = 30) -> list[str]:
    """Most frequent nouns over all transcripts; frequency ties break alphabetically."""
    counts: dict[str, int] = {}
    for text in transcripts:
        for word in text.lower().split():
            if lexicon.get(word) == "noun":
                counts[word] = counts.get(word, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [w for w, _ in ranked[:n]]


def keyword_labels(transcripts, keywords) -> np.ndarray:
    keyset = set(keywords)
    return np.array(
        [any(w in keyset for w in text.lower().split()) for text in transcripts],
        dtype=np.int64,
    )


def pool_embeddings(embedding_seqs) -> np.ndarray:
    """Mean-pool [D, F] embedding sequences into [N, D] features."""
    return np.stack([np.asarray(e, dtype=np.float64).mean(axis=-1) for e in embedding_seqs])


def wordspot_probe(
    embeddings: dict[str, list[np.ndarray]],
    transcripts: dict[str, list[str]],
    lexicon: dict[str, str] = WORD_LEXICON,
    n_keywords: int = 30,
    seed: int = 0,
) -> dict:
    """Linear keyword-presence probe over mean-pooled EEG embeddings.

    `embeddings` and `transcripts` are keyed by split and must contain
    "train". Returns unweighted (macro) F1 per split; a single-class split
    is reported as undefined (None).
    """
    if "train" not in embeddings or "train" not in transcripts:
        raise DataError("wordspot probe requires a 'train' split")
    all_texts = [t for split in transcripts.values() for t in split]
    keywords = top_nouns(all_texts, lexicon, n_keywords)
    y_train = keyword_labels(transcripts["train"], keywords)
    if len(set(y_train.tolist())) < 2:
        raise DataError("train split has a single keyword class; probe cannot be fit")
    clf = LogisticRegression(max_iter=1000, random_state=seed)
    clf.fit(pool_embeddings(embeddings["train"]), y_train)

    out: dict = {"keywords": keywords, "splits": {}}
    for split, seqs in embeddings.items():
        y = keyword_labels(transcripts[split], keywords)
        if len(set(y.tolist())) < 2:
            out["splits"][split] = {"f1": None, "positive_f1": None, "n": len(y)}
            continue
        pred = clf.predict(pool_embeddings(seqs))
        out["splits"][split] = {
            "f1": float(f1_score(y, pred, average="macro")),
            "positive_f1": float(f1_score(y, pred, pos_label=1, zero_division=0.0)),
            "n": len(y),
        }
    return out


# --------------------------------------------------------------------------
# forced-alignment ingestion (TextGrid interval tiers)

_TG_ITEM = re.compile(r"item\s*\[\d+\]\s*:")
_TG_NAME = re.compile(r'name\s*=\s*"([^"]*)"')
_TG_INTERVAL = re.compile(
    r"intervals\s*\[\d+\]\s*:\s*"
    r"xmin\s*=\s*([-\d.eE+]+)\s*"
    r"xmax\s*=\s*([-\d.eE+]+)\s*"
    r'text\s*=\s*"([^"]*)"'
)


def parse_textgrid(path: str | Path, tier: str = "phones") -> PhonemeAlignment:
    """Read one interval tier of a (long-format) TextGrid into an alignment.

    Empty-text intervals (silence) are dropped; labels keep their raw form
    and are normalized at lookup time.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"TextGrid not found: {path}")
    text = path.read_text()
    for chunk in _TG_ITEM.split(text)[1:]:
        name = _TG_NAME.search(chunk)
        if name is None or name.group(1) != tier:
            continue
        entries = [
            (label, float(xmin), float(xmax))
            for xmin, xmax, label in _TG_INTERVAL.findall(chunk)
            if label.strip()
        ]
        if not entries:
            raise DataError(f"tier {tier!r} in {path} has no labeled intervals")
        return PhonemeAlignment(entries=entries)
    raise DataError(f"no interval tier named {tier!r} in {path}")
