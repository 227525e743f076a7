import numpy as np
import pytest
import torch

from conftest import make_tiny_config
from eeg2speech import dsp
from eeg2speech.data import load_batch, read_eeg
from eeg2speech.eeg_net import EegAutoencoder, cosine_reconstruction_loss
from eeg2speech.errors import ConfigError, DataError, NumericalError
from eeg2speech.trainer import (
    GROUP_MODULES,
    LOSS_KEYS,
    TRAINABLE_GROUPS,
    build_modules,
    configure_run,
    infer_waveform,
    load_checkpoint,
    parameter_fingerprint,
    pretrain_eeg,
    save_checkpoint,
    save_module_checkpoint,
    state_from_checkpoint,
    train,
    train_step,
)


@pytest.fixture(scope="module")
def train_batch(corpus):
    rows = corpus.subset("train")[:2]
    return load_batch(rows, corpus.root)


@pytest.fixture(scope="module")
def pretrained_dir(tmp_path_factory):
    """Component checkpoints for the pt-* configurations."""
    out = tmp_path_factory.mktemp("pretrained")
    torch.manual_seed(99)
    modules = build_modules(make_tiny_config())
    save_module_checkpoint(modules, "speech", out / "speech.pt")
    save_module_checkpoint(modules, "eeg", out / "eeg.pt")
    return out


def _cfg_for(name, pretrained_dir):
    return make_tiny_config(
        config_name=name,
        pretrained_speech=str(pretrained_dir / "speech.pt"),
        pretrained_eeg=str(pretrained_dir / "eeg.pt"),
    )


def _group_fingerprints(state):
    return {
        group: tuple(parameter_fingerprint(state.modules[m]) for m in names)
        for group, names in GROUP_MODULES.items()
    }


class TestConfigureRun:
    def test_vanilla_all_trainable_random_init(self):
        state = configure_run(make_tiny_config())
        assert state.trainable_groups == {"eeg", "speech", "connector"}
        assert state.use_gan
        assert all(p.requires_grad for m in state.modules.values() for p in m.parameters())

    def test_missing_pretrained_path_raises(self, tmp_path):
        cfg = make_tiny_config(config_name="pt-audio",
                               pretrained_speech=str(tmp_path / "nope.pt"))
        with pytest.raises(ConfigError, match="nope.pt"):
            configure_run(cfg)

    def test_unset_pretrained_path_raises(self):
        cfg = make_tiny_config(config_name="pt-audio-fz")
        with pytest.raises(ConfigError, match="pretrained_speech"):
            configure_run(cfg)

    def test_frozen_groups_have_no_grad_flags(self, pretrained_dir):
        state = configure_run(_cfg_for("pt-audio-eeg-fz", pretrained_dir))
        for group, names in GROUP_MODULES.items():
            expected = group == "connector"
            for name in names:
                assert all(p.requires_grad == expected
                           for p in state.modules[name].parameters())
        assert not state.use_gan

    def test_pretrained_parameters_actually_loaded(self, pretrained_dir):
        state = configure_run(_cfg_for("pt-audio-eeg", pretrained_dir))
        payload = torch.load(pretrained_dir / "speech.pt", weights_only=True)
        ours = state.modules["generator"].state_dict()
        theirs = payload["modules"]["generator"]
        assert all(torch.equal(ours[k], theirs[k]) for k in theirs)


class TestTrainStep:
    def test_loss_report_keys_and_finiteness(self, train_batch):
        state = configure_run(make_tiny_config())
        report = train_step(state, train_batch)
        assert tuple(report) == LOSS_KEYS
        assert all(np.isfinite(v) for v in report.values())
        assert state.iteration == 1

    @pytest.mark.parametrize("name", sorted(TRAINABLE_GROUPS))
    def test_freezing_matrix(self, name, pretrained_dir, train_batch):
        state = configure_run(_cfg_for(name, pretrained_dir))
        before = _group_fingerprints(state)
        for _ in range(10):
            train_step(state, train_batch)
        after = _group_fingerprints(state)
        changed = {g for g in GROUP_MODULES if before[g] != after[g]}
        assert changed == TRAINABLE_GROUPS[name]

    def test_gan_losses_zero_when_speech_frozen(self, pretrained_dir, train_batch):
        state = configure_run(_cfg_for("pt-audio-fz", pretrained_dir))
        report = train_step(state, train_batch)
        assert report["L_adv_g"] == report["L_adv_d"] == report["L_fm"] == 0.0

    def test_nan_abort_names_first_bad_term(self, train_batch):
        state = configure_run(make_tiny_config())
        with torch.no_grad():
            state.modules["posterior"].proj.weight.fill_(float("nan"))
        with pytest.raises(NumericalError, match="L_KL"):
            train_step(state, train_batch)


class TestGradientStop:
    def test_zero_eeg_weight_leaves_encoder_bitwise_unchanged(self, train_batch):
        state = configure_run(make_tiny_config(eeg_loss_weight=0.0))
        before = parameter_fingerprint(state.modules["eeg"])
        for _ in range(10):
            train_step(state, train_batch)
        assert parameter_fingerprint(state.modules["eeg"]) == before

    def test_combined_updates_match_eeg_only_run(self, train_batch):
        cfg = make_tiny_config()
        state = configure_run(cfg)
        for _ in range(5):
            train_step(state, train_batch)

        torch.manual_seed(cfg.train.seed)  # same init stream as configure_run
        solo = EegAutoencoder(cfg.eeg)
        opt = torch.optim.AdamW(solo.parameters(), lr=cfg.train.lr,
                                betas=cfg.train.betas,
                                weight_decay=cfg.train.weight_decay)
        sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=cfg.train.lr_decay)
        for _ in range(5):
            recon = solo(train_batch.eeg)[..., : train_batch.eeg.shape[-1]]
            loss = cfg.train.eeg_loss_weight * cosine_reconstruction_loss(
                train_batch.eeg, recon, lengths=train_batch.eeg_lengths
            )
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
        assert parameter_fingerprint(state.modules["eeg"]) == parameter_fingerprint(solo)


@pytest.fixture(scope="module")
def eeg_input(corpus):
    row = corpus.subset("train")[0]
    rec = read_eeg(corpus.root / row.eeg_path)
    return dsp.preprocess_eeg(rec)


class TestInference:
    def test_length_contract(self, eeg_input):
        state = configure_run(make_tiny_config())
        utt = infer_waveform(eeg_input, state, temperature=0.0)
        n_audio = round(eeg_input.n_timesteps * 22050 / 256)
        assert len(utt.waveform) == (n_audio // 256 + 1) * 256
        assert utt.fs == 22050

    def test_zero_temperature_deterministic(self, eeg_input):
        state = configure_run(make_tiny_config())
        a = infer_waveform(eeg_input, state, temperature=0.0)
        b = infer_waveform(eeg_input, state, temperature=0.0)
        assert np.array_equal(a.waveform, b.waveform)

    def test_runs_without_posterior_encoder(self, eeg_input):
        state = configure_run(make_tiny_config())
        del state.modules["posterior"]
        del state.modules["discriminator"]
        utt = infer_waveform(eeg_input, state, temperature=0.0)
        assert np.all(np.isfinite(utt.waveform))

    def test_unpreprocessed_rate_raises(self, corpus):
        row = corpus.subset("train")[0]
        rec = read_eeg(corpus.root / row.eeg_path)  # still at the raw 512 Hz
        state = configure_run(make_tiny_config())
        with pytest.raises(DataError):
            infer_waveform(rec, state)


class TestCheckpoints:
    def test_round_trip_bitwise(self, tmp_path, train_batch):
        state = configure_run(make_tiny_config())
        train_step(state, train_batch)
        save_checkpoint(state, tmp_path / "ck.pt")
        fresh = configure_run(make_tiny_config())
        assert parameter_fingerprint(fresh.modules["eeg"]) != \
            parameter_fingerprint(state.modules["eeg"])  # one step has been taken
        load_checkpoint(tmp_path / "ck.pt", fresh)
        assert fresh.iteration == 1
        for name in state.modules:
            assert parameter_fingerprint(fresh.modules[name]) == \
                parameter_fingerprint(state.modules[name])

    def test_forward_identical_after_reload(self, tmp_path, train_batch):
        state = configure_run(make_tiny_config())
        train_step(state, train_batch)
        save_checkpoint(state, tmp_path / "ck.pt")
        rebuilt = state_from_checkpoint(tmp_path / "ck.pt")
        with torch.no_grad():
            a = state.modules["eeg"].encoder(train_batch.eeg)
            b = rebuilt.modules["eeg"].encoder(train_batch.eeg)
        assert torch.equal(a, b)

    def test_config_hash_guard(self, tmp_path):
        state = configure_run(make_tiny_config())
        save_checkpoint(state, tmp_path / "ck.pt")
        other = configure_run(make_tiny_config(lr=3e-4))
        with pytest.raises(ConfigError, match="different config"):
            load_checkpoint(tmp_path / "ck.pt", other)

    def test_wrong_component_kind_rejected(self, tmp_path):
        modules = build_modules(make_tiny_config())
        save_module_checkpoint(modules, "eeg", tmp_path / "eeg.pt")
        cfg = make_tiny_config(config_name="pt-audio",
                               pretrained_speech=str(tmp_path / "eeg.pt"))
        with pytest.raises(ConfigError, match="expected 'speech'"):
            configure_run(cfg)


class TestLoops:
    def test_pretrain_eeg_reduces_loss(self, corpus, tmp_path):
        cfg = make_tiny_config()
        model, losses = pretrain_eeg(cfg, corpus, n_steps=30, run_dir=tmp_path)
        assert losses[-1] < losses[0]
        assert (tmp_path / "eeg.pt").exists()

    def test_train_writes_artifacts_and_is_deterministic(self, corpus, tmp_path):
        cfg = make_tiny_config(max_iterations=6)
        state_a = train(cfg, corpus, tmp_path / "a")
        state_b = train(cfg, corpus, tmp_path / "b")
        assert state_a.history == state_b.history
        for name in ("config.yaml", "train_log.jsonl", "checkpoint.pt",
                     "speech.pt", "eeg.pt"):
            assert (tmp_path / "a" / name).exists()
        import json

        records = [json.loads(line)
                   for line in (tmp_path / "a" / "train_log.jsonl").read_text().splitlines()]
        assert records
        assert set(LOSS_KEYS) <= set(records[0])
        assert {"iteration", "lr", "wall_time"} <= set(records[0])
