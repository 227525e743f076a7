"""Training orchestration: run configurations, joint steps, checkpoints, inference.

Five run configurations differ only in which parameter groups are loaded from
pretrained checkpoints and which stay trainable:

    vanilla          all groups trainable, random init
    pt-audio         speech loaded, all groups trainable
    pt-audio-fz      speech loaded + frozen; EEG + connector trainable
    pt-audio-eeg     speech + EEG loaded; EEG frozen; speech + connector trainable
    pt-audio-eeg-fz  speech + EEG loaded + frozen; connector only

When the speech group is frozen the adversarial game is inert, so GAN losses
are reported as zero and the discriminator is not updated.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import dsp
from .config import RunConfig, config_hash, config_to_dict
from .connector import CouplingFlow, Prenet, kl_loss
from .data import Batch, Manifest, load_batch, shuffled_rows
from .eeg_net import EegAutoencoder, cosine_reconstruction_loss
from .errors import ConfigError, DataError, NumericalError
from .speech_net import (
    DiscriminatorEnsemble,
    MelSpectrogramTorch,
    PosteriorEncoder,
    WaveformGenerator,
    discriminator_loss,
    feature_matching_loss,
    generator_adversarial_loss,
    mel_reconstruction_loss,
)
from .types import EegRecording, SpeechUtterance

GROUP_MODULES = {
    "eeg": ("eeg",),
    "speech": ("posterior", "generator", "discriminator"),
    "connector": ("prenet", "flow"),
}

TRAINABLE_GROUPS = {
    "vanilla": {"eeg", "speech", "connector"},
    "pt-audio": {"eeg", "speech", "connector"},
    "pt-audio-fz": {"eeg", "connector"},
    "pt-audio-eeg": {"speech", "connector"},
    "pt-audio-eeg-fz": {"connector"},
}

PRETRAINED_GROUPS = {
    "vanilla": (),
    "pt-audio": ("speech",),
    "pt-audio-fz": ("speech",),
    "pt-audio-eeg": ("speech", "eeg"),
    "pt-audio-eeg-fz": ("speech", "eeg"),
}

LOSS_KEYS = ("L_EEG", "L_mel", "L_KL", "L_adv_g", "L_adv_d", "L_fm")


@dataclass
class TrainState:
    cfg: RunConfig
    modules: dict[str, torch.nn.Module]
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer | None
    sched_g: torch.optim.lr_scheduler.LRScheduler
    sched_d: torch.optim.lr_scheduler.LRScheduler | None
    mel: MelSpectrogramTorch
    use_gan: bool
    trainable_groups: set[str]
    iteration: int = 0
    history: list[dict] = field(default_factory=list)


def build_modules(cfg: RunConfig) -> dict[str, torch.nn.Module]:
    return {
        "eeg": EegAutoencoder(cfg.eeg),
        "posterior": PosteriorEncoder(cfg.speech),
        "generator": WaveformGenerator(cfg.speech),
        "discriminator": DiscriminatorEnsemble(cfg.speech),
        "prenet": Prenet(cfg.connector),
        "flow": CouplingFlow(cfg.connector),
    }


def save_module_checkpoint(
    modules: dict[str, torch.nn.Module], group: str, path: str | Path
) -> None:
    """Component checkpoint (one freezing group) usable as pretrained input."""
    if group not in GROUP_MODULES:
        raise ConfigError(f"unknown module group {group!r}")
    payload = {
        "kind": group,
        "modules": {name: modules[name].state_dict() for name in GROUP_MODULES[group]},
    }
    torch.save(payload, path)


def load_module_checkpoint(
    modules: dict[str, torch.nn.Module], group: str, path: str | Path
) -> None:
    path = Path(path)
    if not path.exists():
        raise ConfigError(
            f"config requires a pretrained {group} checkpoint, but {path} does not exist"
        )
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("kind") != group:
        raise ConfigError(
            f"{path} holds a {payload.get('kind')!r} checkpoint, expected {group!r}"
        )
    try:
        for name in GROUP_MODULES[group]:
            modules[name].load_state_dict(payload["modules"][name])
    except (KeyError, RuntimeError) as exc:
        raise ConfigError(f"checkpoint {path} does not match configured modules: {exc}")


def configure_run(cfg: RunConfig) -> TrainState:
    """Build modules, load required pretrained groups, apply the freezing matrix."""
    name = cfg.train.config_name
    torch.manual_seed(cfg.train.seed)
    modules = build_modules(cfg)

    pretrained_paths = {"speech": cfg.train.pretrained_speech, "eeg": cfg.train.pretrained_eeg}
    for group in PRETRAINED_GROUPS[name]:
        path = pretrained_paths[group]
        if not path:
            raise ConfigError(
                f"config {name!r} requires train.pretrained_{group} to be set"
            )
        load_module_checkpoint(modules, group, path)

    trainable = TRAINABLE_GROUPS[name]
    for group, names in GROUP_MODULES.items():
        requires = group in trainable
        for mod_name in names:
            for p in modules[mod_name].parameters():
                p.requires_grad_(requires)
            modules[mod_name].train(requires)

    use_gan = "speech" in trainable
    gen_side = [
        p
        for mod_name in ("eeg", "posterior", "generator", "prenet", "flow")
        for p in modules[mod_name].parameters()
        if p.requires_grad
    ]
    opt_g = torch.optim.AdamW(
        gen_side, lr=cfg.train.lr, betas=cfg.train.betas,
        weight_decay=cfg.train.weight_decay,
    )
    sched_g = torch.optim.lr_scheduler.ExponentialLR(opt_g, gamma=cfg.train.lr_decay)
    opt_d = sched_d = None
    if use_gan:
        opt_d = torch.optim.AdamW(
            modules["discriminator"].parameters(), lr=cfg.train.lr,
            betas=cfg.train.betas, weight_decay=cfg.train.weight_decay,
        )
        sched_d = torch.optim.lr_scheduler.ExponentialLR(opt_d, gamma=cfg.train.lr_decay)

    return TrainState(
        cfg=cfg, modules=modules, opt_g=opt_g, opt_d=opt_d,
        sched_g=sched_g, sched_d=sched_d, mel=MelSpectrogramTorch(),
        use_gan=use_gan, trainable_groups=set(trainable),
    )


def align_embeddings(emb: torch.Tensor, n_frames: int) -> torch.Tensor:
    """Linear interpolation of [B, D, F_eeg] embeddings to the speech frame count."""
    if emb.shape[-1] == n_frames:
        return emb
    return F.interpolate(emb, size=n_frames, mode="linear", align_corners=False)


def _check_finite(name: str, value: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(value):
        raise NumericalError(f"loss term {name} became non-finite at training step")
    return value


def _segment_batch(posterior_sample, batch: Batch, hop: int, segment_size: int):
    """Per-item random aligned (latent, waveform) segments of equal length."""
    valid = batch.frame_mask.sum(dim=1).long()
    seg_frames = min(segment_size // hop, int(valid.min()))
    z_segs, y_segs = [], []
    for i in range(posterior_sample.shape[0]):
        max_start = min(
            int(valid[i]) - seg_frames,
            (int(batch.wav_lengths[i]) - seg_frames * hop) // hop,
        )
        max_start = max(max_start, 0)
        start = int(torch.randint(0, max_start + 1, (1,)))
        z_segs.append(posterior_sample[i, :, start : start + seg_frames])
        y_segs.append(batch.wav[i, start * hop : (start + seg_frames) * hop])
    return torch.stack(z_segs), torch.stack(y_segs)


def train_step(state: TrainState, batch: Batch) -> dict[str, float]:
    """One generator-side and (if active) one discriminator-side update."""
    cfg = state.cfg
    modules = state.modules
    hop = cfg.speech.hop_size

    # EEG autoencoding branch (Eq.-style cosine reconstruction)
    emb = modules["eeg"].encoder(batch.eeg)
    recon = modules["eeg"].decoder(emb)[..., : batch.eeg.shape[-1]]
    l_eeg = _check_finite(
        "L_EEG", cosine_reconstruction_loss(batch.eeg, recon, lengths=batch.eeg_lengths)
    )

    # speech posterior and the prior from gradient-stopped EEG embeddings
    posterior = modules["posterior"](batch.spec)
    emb_aligned = align_embeddings(emb.detach(), batch.spec.shape[-1])
    prior = modules["prenet"](emb_aligned, padding_mask=(batch.frame_mask == 0))
    l_kl = _check_finite(
        "L_KL", kl_loss(posterior, prior, modules["flow"], frame_mask=batch.frame_mask)
    )

    z_seg, y_seg = _segment_batch(posterior.sample, batch, hop, cfg.speech.segment_size)
    y_hat = modules["generator"](z_seg)

    zero = torch.zeros((), dtype=y_hat.dtype)
    l_adv_d = l_adv_g = l_fm = zero
    if state.use_gan:
        real_scores, _ = modules["discriminator"](y_seg)
        fake_scores, _ = modules["discriminator"](y_hat.detach())
        l_adv_d = _check_finite("L_adv_d", discriminator_loss(real_scores, fake_scores))
        state.opt_d.zero_grad()
        l_adv_d.backward()
        state.opt_d.step()
        state.sched_d.step()

        fake_scores, fake_fmaps = modules["discriminator"](y_hat)
        _, real_fmaps = modules["discriminator"](y_seg)
        l_adv_g = _check_finite("L_adv_g", generator_adversarial_loss(fake_scores))
        l_fm = _check_finite("L_fm", feature_matching_loss(real_fmaps, fake_fmaps))

    l_mel = _check_finite("L_mel", mel_reconstruction_loss(y_seg, y_hat, state.mel))

    total = cfg.speech.mel_weight * l_mel + l_kl + l_adv_g + cfg.speech.fm_weight * l_fm
    # a zero weight must keep the EEG encoder bitwise untouched, so the term
    # is omitted from the graph entirely rather than multiplied by zero
    if cfg.train.eeg_loss_weight != 0.0 and "eeg" in state.trainable_groups:
        total = total + cfg.train.eeg_loss_weight * l_eeg
    state.opt_g.zero_grad()
    total.backward()
    state.opt_g.step()
    state.sched_g.step()

    state.iteration += 1
    terms = (l_eeg, l_mel, l_kl, l_adv_g, l_adv_d, l_fm)
    return {key: float(t.detach()) for key, t in zip(LOSS_KEYS, terms)}


def _batches(rows, batch_size, seed, n_iterations, root):
    produced = 0
    epoch = 0
    while produced < n_iterations:
        order = shuffled_rows(rows, seed + epoch)
        for i in range(0, len(order), batch_size):
            chunk = order[i : i + batch_size]
            if not chunk:
                break
            yield load_batch(chunk, root)
            produced += 1
            if produced >= n_iterations:
                return
        epoch += 1


def train(
    cfg: RunConfig,
    manifest: Manifest,
    run_dir: str | Path,
    max_iterations: int | None = None,
) -> TrainState:
    """Full combined training loop over the manifest's train split."""
    from .config import save_config

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.yaml")

    rows = manifest.subset("train")
    if not rows:
        raise DataError("manifest has no train rows")
    state = configure_run(cfg)
    n_iter = cfg.train.max_iterations if max_iterations is None else max_iterations

    log_path = run_dir / "train_log.jsonl"
    t0 = time.monotonic()
    with open(log_path, "w") as log:
        for batch in _batches(rows, cfg.train.batch_size, cfg.train.seed, n_iter, manifest.root):
            report = train_step(state, batch)
            state.history.append(report)
            if state.iteration % cfg.train.log_every == 0 or state.iteration == n_iter:
                record = {
                    "iteration": state.iteration,
                    **report,
                    "lr": state.sched_g.get_last_lr()[0],
                    "wall_time": time.monotonic() - t0,
                }
                log.write(json.dumps(record) + "\n")
                log.flush()
            if cfg.train.checkpoint_every and state.iteration % cfg.train.checkpoint_every == 0:
                save_checkpoint(state, run_dir / "checkpoint.pt")
    save_checkpoint(state, run_dir / "checkpoint.pt")
    save_module_checkpoint(state.modules, "speech", run_dir / "speech.pt")
    save_module_checkpoint(state.modules, "eeg", run_dir / "eeg.pt")
    return state


def pretrain_eeg(
    cfg: RunConfig, manifest: Manifest, n_steps: int, run_dir: str | Path | None = None
) -> tuple[EegAutoencoder, list[float]]:
    """Train the EEG autoencoder alone with the cosine reconstruction loss."""
    torch.manual_seed(cfg.train.seed)
    model = EegAutoencoder(cfg.eeg)
    opt = torch.optim.AdamW(
        model.parameters(), lr=cfg.train.lr, betas=cfg.train.betas,
        weight_decay=cfg.train.weight_decay,
    )
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=cfg.train.lr_decay)
    rows = manifest.subset("train")
    if not rows:
        raise DataError("manifest has no train rows")
    losses = []
    for batch in _batches(rows, cfg.train.batch_size, cfg.train.seed, n_steps, manifest.root):
        recon = model(batch.eeg)[..., : batch.eeg.shape[-1]]
        loss = _check_finite(
            "L_EEG", cosine_reconstruction_loss(batch.eeg, recon, lengths=batch.eeg_lengths)
        )
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        losses.append(float(loss.detach()))
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        save_module_checkpoint({"eeg": model}, "eeg", run_dir / "eeg.pt")
    return model, losses


def infer_waveform(
    x: EegRecording, state: TrainState, temperature: float = 0.667
) -> SpeechUtterance:
    """EEG encode -> align -> prenet -> sample -> flow inverse -> waveform decode.

    Uses only the inference-path modules; the speech posterior encoder and
    discriminators may be absent from the state.
    """
    cfg = state.cfg
    if x.fs != cfg.dsp.eeg_fs:
        raise DataError(
            f"expected preprocessed EEG at {cfg.dsp.eeg_fs} Hz, got {x.fs}; run the DSP chain first"
        )
    encoder = state.modules["eeg"].encoder
    prenet, flow, generator = (state.modules[k] for k in ("prenet", "flow", "generator"))
    was_training = {m: m.training for m in (encoder, prenet, flow, generator)}
    for m in was_training:
        m.eval()
    try:
        with torch.no_grad():
            eeg = torch.tensor(x.samples, dtype=torch.float32)[None]
            emb = encoder(eeg)
            n_audio = int(round(x.n_timesteps * cfg.dsp.audio_fs / cfg.dsp.eeg_fs))
            n_frames = dsp.n_frames_for_length(n_audio, cfg.dsp.hop_size)
            prior = prenet(align_embeddings(emb, n_frames))
            w = prior.mean if temperature == 0.0 else prior.sample(temperature)
            z = flow.inverse(w)
            wav = generator(z)[0]
    finally:
        for m, training in was_training.items():
            m.train(training)
    if not torch.all(torch.isfinite(wav)):
        raise NumericalError("inference produced non-finite waveform samples")
    return SpeechUtterance(wav.numpy().astype(np.float64), cfg.dsp.audio_fs)


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    payload = {
        "modules": {k: m.state_dict() for k, m in state.modules.items()},
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict() if state.opt_d is not None else None,
        "sched_g": state.sched_g.state_dict(),
        "sched_d": state.sched_d.state_dict() if state.sched_d is not None else None,
        "iteration": state.iteration,
        "config_hash": config_hash(state.cfg),
        "config": config_to_dict(state.cfg),
        "torch_rng": torch.get_rng_state(),
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path, state: TrainState) -> TrainState:
    """Resume into a state built from the same config; hash mismatches refuse to load."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload["config_hash"] != config_hash(state.cfg):
        raise ConfigError(
            f"checkpoint {path} was written with a different config "
            f"({payload['config_hash']} != {config_hash(state.cfg)})"
        )
    for k, m in state.modules.items():
        m.load_state_dict(payload["modules"][k])
    state.opt_g.load_state_dict(payload["opt_g"])
    if state.opt_d is not None and payload["opt_d"] is not None:
        state.opt_d.load_state_dict(payload["opt_d"])
    state.sched_g.load_state_dict(payload["sched_g"])
    if state.sched_d is not None and payload["sched_d"] is not None:
        state.sched_d.load_state_dict(payload["sched_d"])
    state.iteration = payload["iteration"]
    torch.set_rng_state(payload["torch_rng"])
    return state


def state_from_checkpoint(path: str | Path) -> TrainState:
    """Rebuild a full TrainState from a checkpoint's embedded config."""
    from .config import config_from_dict

    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    cfg = config_from_dict(payload["config"])
    state = configure_run(cfg)
    return load_checkpoint(path, state)


def parameter_fingerprint(module: torch.nn.Module) -> str:
    """Stable hash of all parameter bytes; equal iff parameters are bitwise equal."""
    digest = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(p.detach().cpu().numpy().tobytes())
    return digest.hexdigest()
