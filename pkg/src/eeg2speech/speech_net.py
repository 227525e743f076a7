"""Speech module: posterior encoder, waveform generator, and discriminators.

The posterior encoder maps linear spectrograms to a diagonal-Gaussian latent
through non-causal WaveNet residual blocks. The generator upsamples latent
frames back to waveform samples (total upsampling equals the STFT hop). A
multi-period plus multi-scale discriminator ensemble supplies least-squares
adversarial and feature-matching losses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import dsp
from .errors import ConfigError, DataError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class SpeechConfig:
    spec_bins: int = 513
    latent_dim: int = 192
    wn_hidden: int = 192
    wn_layers: int = 4
    wn_kernel: int = 5
    upsample_rates: list[int] = field(default_factory=lambda: [8, 8, 2, 2])
    upsample_initial: int = 128
    resblock_kernels: list[int] = field(default_factory=lambda: [3, 7])
    resblock_dilations: list[int] = field(default_factory=lambda: [1, 3])
    periods: list[int] = field(default_factory=lambda: [2, 3, 5, 7, 11])
    disc_channels: int = 32
    segment_size: int = 8192
    mel_weight: float = 45.0
    fm_weight: float = 2.0

    @property
    def hop_size(self) -> int:
        return math.prod(self.upsample_rates)


@dataclass
class GaussianLatent:
    """Per-frame diagonal Gaussian with a recorded reparameterized sample."""

    mean: torch.Tensor
    log_scale: torch.Tensor
    sample: torch.Tensor
    eps: torch.Tensor

    def log_prob(self, z: torch.Tensor) -> torch.Tensor:
        """Elementwise Gaussian log density, same shape as z."""
        var_term = (z - self.mean) * torch.exp(-self.log_scale)
        return -self.log_scale - 0.5 * LOG_2PI - 0.5 * var_term ** 2


class WaveNetStack(nn.Module):
    """Non-causal gated residual conv stack with skip accumulation."""

    def __init__(self, hidden: int, kernel: int, n_layers: int):
        super().__init__()
        self.in_layers = nn.ModuleList()
        self.res_skip = nn.ModuleList()
        for i in range(n_layers):
            dilation = 2 ** i
            pad = (kernel - 1) * dilation // 2
            self.in_layers.append(
                nn.Conv1d(hidden, 2 * hidden, kernel, dilation=dilation, padding=pad)
            )
            self.res_skip.append(nn.Conv1d(hidden, 2 * hidden, 1))

    def forward(self, x):
        skip_total = torch.zeros_like(x)
        for in_layer, res_skip in zip(self.in_layers, self.res_skip):
            h = in_layer(x)
            gate_a, gate_b = h.chunk(2, dim=1)
            h = torch.tanh(gate_a) * torch.sigmoid(gate_b)
            res, skip = res_skip(h).chunk(2, dim=1)
            x = x + res
            skip_total = skip_total + skip
        return skip_total


class PosteriorEncoder(nn.Module):
    def __init__(self, cfg: SpeechConfig):
        super().__init__()
        self.cfg = cfg
        self.pre = nn.Conv1d(cfg.spec_bins, cfg.wn_hidden, 1)
        self.wavenet = WaveNetStack(cfg.wn_hidden, cfg.wn_kernel, cfg.wn_layers)
        self.proj = nn.Conv1d(cfg.wn_hidden, 2 * cfg.latent_dim, 1)

    def forward(
        self, spec: torch.Tensor, eps: torch.Tensor | None = None
    ) -> GaussianLatent:
        """spec: [B, spec_bins, F] -> latent stats and sample [B, latent_dim, F]."""
        if spec.shape[1] != self.cfg.spec_bins:
            raise ConfigError(
                f"expected {self.cfg.spec_bins} spectrogram bins, got {spec.shape[1]}"
            )
        h = self.wavenet(self.pre(spec))
        mean, log_scale = self.proj(h).chunk(2, dim=1)
        log_scale = log_scale.clamp(-9.0, 4.0)
        if eps is None:
            eps = torch.randn_like(mean)
        sample = mean + torch.exp(log_scale) * eps
        return GaussianLatent(mean=mean, log_scale=log_scale, sample=sample, eps=eps)


class ResBlock(nn.Module):
    def __init__(self, channels: int, kernel: int, dilations: list[int]):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv1d(channels, channels, kernel, dilation=d,
                      padding=(kernel - 1) * d // 2)
            for d in dilations
        )

    def forward(self, x):
        for conv in self.convs:
            x = x + conv(F.leaky_relu(x, 0.1))
        return x


class WaveformGenerator(nn.Module):
    """Upsampling GAN decoder; total upsampling equals the STFT hop size."""

    def __init__(self, cfg: SpeechConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.upsample_initial
        self.pre = nn.Conv1d(cfg.latent_dim, ch, 7, padding=3)
        self.ups = nn.ModuleList()
        self.resblocks = nn.ModuleList()
        for rate in cfg.upsample_rates:
            self.ups.append(
                nn.ConvTranspose1d(ch, ch // 2, 2 * rate, stride=rate, padding=rate // 2)
            )
            ch //= 2
            self.resblocks.append(
                nn.ModuleList(
                    ResBlock(ch, k, cfg.resblock_dilations) for k in cfg.resblock_kernels
                )
            )
        self.post = nn.Conv1d(ch, 1, 7, padding=3)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        """z: [B, latent_dim, F] -> waveform [B, F * hop_size] in [-1, 1]."""
        x = self.pre(z)
        for up, blocks in zip(self.ups, self.resblocks):
            x = up(F.leaky_relu(x, 0.1))
            x = sum(block(x) for block in blocks) / len(blocks)
        wav = torch.tanh(self.post(F.leaky_relu(x, 0.1)))
        return wav.squeeze(1)


class PeriodDiscriminator(nn.Module):
    def __init__(self, period: int, base_channels: int = 32):
        super().__init__()
        self.period = period
        chans = [1, base_channels, 2 * base_channels, 4 * base_channels]
        self.convs = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], (5, 1), stride=(3, 1), padding=(2, 0))
            for i in range(len(chans) - 1)
        )
        self.post = nn.Conv2d(chans[-1], 1, (3, 1), padding=(1, 0))

    def forward(self, wav: torch.Tensor):
        b, t = wav.shape
        pad = (-t) % self.period
        x = F.pad(wav, (0, pad), mode="reflect")
        x = x.view(b, 1, -1, self.period)
        fmaps = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.1)
            fmaps.append(x)
        score = self.post(x)
        fmaps.append(score)
        return score.flatten(1), fmaps


class ScaleDiscriminator(nn.Module):
    def __init__(self, base_channels: int = 32):
        super().__init__()
        c = base_channels
        self.convs = nn.ModuleList([
            nn.Conv1d(1, c, 15, stride=1, padding=7),
            nn.Conv1d(c, 2 * c, 41, stride=4, groups=4, padding=20),
            nn.Conv1d(2 * c, 4 * c, 41, stride=4, groups=8, padding=20),
            nn.Conv1d(4 * c, 4 * c, 5, stride=1, padding=2),
        ])
        self.post = nn.Conv1d(4 * c, 1, 3, padding=1)

    def forward(self, wav: torch.Tensor):
        x = wav.unsqueeze(1)
        fmaps = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.1)
            fmaps.append(x)
        score = self.post(x)
        fmaps.append(score)
        return score.flatten(1), fmaps


class DiscriminatorEnsemble(nn.Module):
    """Multi-period discriminators plus one multi-scale stage."""

    def __init__(self, cfg: SpeechConfig):
        super().__init__()
        discs: list[nn.Module] = [
            PeriodDiscriminator(p, cfg.disc_channels) for p in cfg.periods
        ]
        discs.append(ScaleDiscriminator(cfg.disc_channels))
        self.discriminators = nn.ModuleList(discs)

    def forward(self, wav: torch.Tensor):
        scores, fmaps = [], []
        for disc in self.discriminators:
            score, fm = disc(wav)
            scores.append(score)
            fmaps.append(fm)
        return scores, fmaps


def discriminator_loss(real_scores, fake_scores) -> torch.Tensor:
    """LS-GAN discriminator objective: real -> 1, fake -> 0."""
    loss = 0.0
    for real, fake in zip(real_scores, fake_scores):
        loss = loss + ((1.0 - real) ** 2).mean() + (fake ** 2).mean()
    return loss


def generator_adversarial_loss(fake_scores) -> torch.Tensor:
    """LS-GAN generator objective: fake -> 1."""
    loss = 0.0
    for fake in fake_scores:
        loss = loss + ((1.0 - fake) ** 2).mean()
    return loss


def feature_matching_loss(real_fmaps, fake_fmaps) -> torch.Tensor:
    """Mean L1 over paired intermediate feature maps."""
    loss = 0.0
    count = 0
    for real_maps, fake_maps in zip(real_fmaps, fake_fmaps):
        for real, fake in zip(real_maps, fake_maps):
            loss = loss + (real.detach() - fake).abs().mean()
            count += 1
    return loss / max(count, 1)


def adversarial_losses(
    ensemble: DiscriminatorEnsemble, real: torch.Tensor, fake: torch.Tensor
) -> dict[str, torch.Tensor]:
    """All GAN-side losses for a real/fake waveform pair (cropped to min length)."""
    if real.dim() == 1:
        real = real[None]
    if fake.dim() == 1:
        fake = fake[None]
    n = min(real.shape[-1], fake.shape[-1])
    if max(real.shape[-1], fake.shape[-1]) > 2 * n:
        raise DataError("real/fake waveform lengths differ beyond crop tolerance")
    real, fake = real[..., :n], fake[..., :n]
    real_scores, real_fmaps = ensemble(real)
    fake_scores, fake_fmaps = ensemble(fake)
    return {
        "disc_loss": discriminator_loss(real_scores, [s.detach() for s in fake_scores]),
        "gen_loss": generator_adversarial_loss(fake_scores),
        "feat_match_loss": feature_matching_loss(real_fmaps, fake_fmaps),
    }


class MelSpectrogramTorch(nn.Module):
    """Differentiable log-mel spectrogram matching the numpy DSP frontend."""

    def __init__(
        self,
        fs: int = dsp.AUDIO_FS,
        fft_size: int = dsp.FFT_SIZE,
        win_size: int = dsp.WIN_SIZE,
        hop_size: int = dsp.HOP_SIZE,
        n_mels: int = dsp.N_MELS,
        log_floor: float = dsp.LOG_FLOOR,
    ):
        super().__init__()
        self.fft_size = fft_size
        self.hop_size = hop_size
        self.log_floor = log_floor
        window = torch.hann_window(win_size, periodic=True)
        fb = torch.tensor(dsp.mel_filterbank(fs, fft_size, n_mels), dtype=torch.float32)
        self.register_buffer("window", window)
        self.register_buffer("mel_fb", fb)

    def forward(self, wav: torch.Tensor) -> torch.Tensor:
        """wav: [B, T] -> log-mel [B, n_mels, T // hop + 1]."""
        if wav.dim() == 1:
            wav = wav[None]
        pad = self.fft_size // 2
        padded = F.pad(wav[:, None], (pad, pad), mode="reflect")[:, 0]
        spec = torch.stft(
            padded, self.fft_size, hop_length=self.hop_size,
            win_length=self.window.shape[0],
            window=self.window.to(wav.dtype), center=False, return_complex=True,
        )
        mag = spec.abs()
        mel = self.mel_fb.to(wav.dtype) @ mag
        return torch.log(mel.clamp_min(self.log_floor))


def mel_reconstruction_loss(
    y: torch.Tensor, y_hat: torch.Tensor, mel: MelSpectrogramTorch
) -> torch.Tensor:
    """L1 distance between log-mel spectrograms of two waveform batches."""
    n = min(y.shape[-1], y_hat.shape[-1])
    return F.l1_loss(mel(y_hat[..., :n]), mel(y[..., :n]))
