import numpy as np
import pytest
import torch

from eeg2speech.config import DataConfig
from eeg2speech.data import (
    Manifest,
    ManifestRow,
    audio_envelope,
    build_splits,
    default_channel_labels,
    generate_synthetic,
    load_batch,
    load_manifest,
    read_audio,
    read_eeg,
    save_manifest,
    shuffled_rows,
    write_audio,
    write_eeg,
)
from eeg2speech.errors import DataError
from eeg2speech.types import EegRecording, SpeechUtterance


def _grid_manifest(n_subjects, n_stimuli):
    rows = [
        ManifestRow(f"S{i:03d}", f"U{j:04d}", f"e_{i}_{j}.f32", f"a_{j}.wav", "the dog")
        for i in range(n_subjects)
        for j in range(n_stimuli)
    ]
    return Manifest(rows=rows, root=".")


class TestSplits:
    def test_paper_scale_counts(self):
        m = build_splits(_grid_manifest(20, 440), 2, 40)
        counts = {s: len(m.subset(s)) for s in
                  ("train", "unseen-audio", "unseen-subject", "unseen-both")}
        assert counts == {"train": 7200, "unseen-audio": 720,
                          "unseen-subject": 800, "unseen-both": 80}

    def test_hold_out_nothing(self):
        m = build_splits(_grid_manifest(3, 4), 0, 0)
        assert len(m.subset("train")) == 12

    def test_two_by_two_enumeration(self):
        m = build_splits(_grid_manifest(2, 2), 1, 1)
        for split in ("train", "unseen-audio", "unseen-subject", "unseen-both"):
            assert len(m.subset(split)) == 1

    def test_cells_partition_manifest(self):
        m = build_splits(_grid_manifest(5, 7), 2, 3)
        keys_by_split = [
            {(r.subject_id, r.stimulus_id) for r in m.subset(s)}
            for s in ("train", "unseen-audio", "unseen-subject", "unseen-both")
        ]
        union = set().union(*keys_by_split)
        assert len(union) == 35
        assert sum(len(k) for k in keys_by_split) == 35

    def test_explicit_ids(self):
        m = build_splits(_grid_manifest(3, 3), ["S001"], ["U0002"])
        assert {r.stimulus_id for r in m.subset("unseen-audio")} == {"U0002"}
        assert {r.subject_id for r in m.subset("unseen-subject")} == {"S001"}

    def test_unknown_held_out_id_raises(self):
        with pytest.raises(DataError):
            build_splits(_grid_manifest(2, 2), ["nope"], 0)

    def test_hold_out_everything_raises(self):
        with pytest.raises(DataError):
            build_splits(_grid_manifest(2, 2), 2, 0)

    def test_duplicate_rows_rejected(self):
        rows = [ManifestRow("a", "b", "e", "w", ""), ManifestRow("a", "b", "e", "w", "")]
        with pytest.raises(DataError):
            Manifest(rows=rows, root=".")


class TestFileIo:
    def test_eeg_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        samples = rng.standard_normal((3, 100)).astype(np.float32)
        rec = EegRecording(samples, 512.0, ["F1", "C1", "P1"], "S01", "U001")
        write_eeg(tmp_path / "x.f32", rec)
        back = read_eeg(tmp_path / "x.f32")
        assert np.array_equal(back.samples, samples.astype(np.float64))
        assert back.fs == 512.0
        assert back.channel_labels == ["F1", "C1", "P1"]
        assert (back.subject_id, back.stimulus_id) == ("S01", "U001")

    def test_audio_round_trip_within_quantization(self, tmp_path):
        rng = np.random.default_rng(1)
        wav = np.clip(rng.standard_normal(5000) * 0.2, -1, 1)
        write_audio(tmp_path / "x.wav", SpeechUtterance(wav, 22050))
        back = read_audio(tmp_path / "x.wav")
        assert back.fs == 22050
        assert np.max(np.abs(back.waveform - wav)) <= 1.0 / 32767.0

    def test_truncated_eeg_raises(self, tmp_path):
        rec = EegRecording(np.zeros((3, 50)), 512.0, ["F1", "C1", "P1"])
        write_eeg(tmp_path / "x.f32", rec)
        raw = (tmp_path / "x.f32").read_bytes()
        (tmp_path / "x.f32").write_bytes(raw[:-6])  # no longer divisible by 3 channels
        with pytest.raises(DataError):
            read_eeg(tmp_path / "x.f32")

    def test_missing_sidecar_raises(self, tmp_path):
        (tmp_path / "y.f32").write_bytes(b"\x00" * 24)
        with pytest.raises(DataError):
            read_eeg(tmp_path / "y.f32")


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    cfg = DataConfig(n_subjects=2, n_stimuli=3, eeg_channels=4, eeg_raw_fs=512,
                     min_duration=1.0, max_duration=1.3,
                     held_out_subjects=1, held_out_stimuli=1, synth_seed=3)
    out = tmp_path_factory.mktemp("synth")
    manifest_path = generate_synthetic(cfg, out)
    return cfg, manifest_path


class TestSyntheticGenerator:
    def test_manifest_loads_and_paths_exist(self, synth_dir):
        cfg, manifest_path = synth_dir
        m = load_manifest(manifest_path)
        assert len(m.rows) == cfg.n_subjects * cfg.n_stimuli

    def test_same_seed_bit_identical(self, synth_dir, tmp_path):
        cfg, manifest_path = synth_dir
        other = generate_synthetic(cfg, tmp_path / "again")
        for rel in sorted(p.relative_to(manifest_path.parent)
                          for p in manifest_path.parent.rglob("*") if p.is_file()):
            a = (manifest_path.parent / rel).read_bytes()
            b = (other.parent / rel).read_bytes()
            assert a == b, f"{rel} differs between runs with the same seed"

    def test_duration_ratio_matches_fs_ratio(self, synth_dir):
        cfg, manifest_path = synth_dir
        m = load_manifest(manifest_path)
        for r in m.rows:
            eeg = read_eeg(m.root / r.eeg_path)
            wav = read_audio(m.root / r.audio_path)
            expected = round(len(wav.waveform) * eeg.fs / wav.fs)
            assert abs(eeg.n_timesteps - expected) <= 1

    def test_envelope_correlation_above_threshold(self, synth_dir):
        from eeg2speech import dsp

        cfg, manifest_path = synth_dir
        m = load_manifest(manifest_path)
        for r in m.rows:
            eeg = read_eeg(m.root / r.eeg_path)
            wav = read_audio(m.root / r.audio_path)
            env = audio_envelope(wav.waveform, wav.fs)
            env_eeg = dsp.resample(env, wav.fs, eeg.fs)[: eeg.n_timesteps]
            for ch in range(eeg.n_channels):
                corr = np.corrcoef(eeg.samples[ch], env_eeg)[0, 1]
                assert corr > 0.3, f"channel {ch} corr {corr:.3f}"

    def test_transcripts_from_lexicon(self, synth_dir):
        from eeg2speech.data import WORD_LEXICON

        _, manifest_path = synth_dir
        m = load_manifest(manifest_path)
        for r in m.rows:
            words = r.transcript.split()
            assert 2 <= len(words) <= 4
            assert all(w in WORD_LEXICON for w in words)

    def test_manifest_round_trip(self, synth_dir, tmp_path):
        _, manifest_path = synth_dir
        m = load_manifest(manifest_path)
        save_manifest(m, tmp_path / "copy.csv")
        again = load_manifest(tmp_path / "copy.csv", check_paths=False)
        assert again.rows == m.rows


class TestBatching:
    def test_single_item_mask_all_valid(self, synth_dir):
        _, manifest_path = synth_dir
        m = load_manifest(manifest_path)
        batch = load_batch(m.rows[:1], m.root)
        assert batch.frame_mask.sum() == batch.frame_mask.shape[1]
        assert batch.eeg.shape[0] == 1
        assert torch.all(torch.isfinite(batch.eeg))

    def test_two_lengths_padded_with_masks(self, synth_dir):
        _, manifest_path = synth_dir
        m = load_manifest(manifest_path)
        # same subject, two different stimuli -> different durations
        rows = [r for r in m.rows if r.subject_id == m.subjects()[0]][:2]
        batch = load_batch(rows, m.root)
        n1, n2 = batch.frame_mask.sum(dim=1).tolist()
        assert batch.spec.shape[-1] == max(int(n1), int(n2))
        assert {int(n1), int(n2)} == {
            int(lw) // 256 + 1 for lw in batch.wav_lengths.tolist()
        }

    def test_empty_batch_raises(self, synth_dir):
        _, manifest_path = synth_dir
        with pytest.raises(DataError):
            load_batch([], manifest_path.parent)

    def test_corrupt_row_names_item(self, synth_dir, tmp_path):
        _, manifest_path = synth_dir
        m = load_manifest(manifest_path)
        bad = ManifestRow("SXX", "UXXX", "eeg/does_not_exist.f32",
                          m.rows[0].audio_path, "", "train")
        with pytest.raises(DataError, match="SXX"):
            load_batch([bad], m.root)

    def test_shuffle_deterministic(self):
        rows = _grid_manifest(3, 3).rows
        assert shuffled_rows(rows, 5) == shuffled_rows(rows, 5)
        assert shuffled_rows(rows, 5) != shuffled_rows(rows, 6)


def test_default_channel_labels_unique_and_regional():
    labels = default_channel_labels(16)
    assert len(set(labels)) == 16
    assert labels[0].startswith("F") and labels[3].startswith("P")
