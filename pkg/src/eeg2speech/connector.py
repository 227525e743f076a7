"""Connector between EEG embedding space and speech latent space.

A transformer prenet maps (gradient-stopped) EEG embeddings to a per-frame
Gaussian prior. A stack of affine coupling layers, each preceded by a fixed
channel flip, relates posterior samples to that prior; scale outputs are
zero-initialized so the flow starts at the identity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError
from .speech_net import GaussianLatent, LOG_2PI


@dataclass
class ConnectorConfig:
    embed_dim: int = 192
    latent_dim: int = 192
    prenet_layers: int = 3
    prenet_heads: int = 2
    prenet_ff_dim: int = 384
    n_coupling_layers: int = 4
    coupling_hidden: int = 96
    coupling_conv_layers: int = 3
    dropout: float = 0.1

    def __post_init__(self):
        if self.latent_dim % 2 != 0:
            raise ConfigError("latent_dim must be even for channel-split coupling")


@dataclass
class PriorSequence:
    """Per-frame diagonal Gaussian prior [latent_dim, n_frames] per item."""

    mean: torch.Tensor
    log_scale: torch.Tensor

    def log_prob(self, z: torch.Tensor) -> torch.Tensor:
        var_term = (z - self.mean) * torch.exp(-self.log_scale)
        return -self.log_scale - 0.5 * LOG_2PI - 0.5 * var_term ** 2

    def sample(self, temperature: float, eps: torch.Tensor | None = None) -> torch.Tensor:
        if eps is None:
            eps = torch.randn_like(self.mean)
        return self.mean + torch.exp(self.log_scale) * temperature * eps


class Prenet(nn.Module):
    """Transformer encoder plus linear projection to prior mean/log-scale."""

    def __init__(self, cfg: ConnectorConfig):
        super().__init__()
        self.cfg = cfg
        self.in_proj = nn.Conv1d(cfg.embed_dim, cfg.latent_dim, 1)
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.latent_dim, nhead=cfg.prenet_heads,
            dim_feedforward=cfg.prenet_ff_dim, dropout=cfg.dropout,
            batch_first=True, norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(
            layer, cfg.prenet_layers, enable_nested_tensor=False
        )
        self.out_proj = nn.Conv1d(cfg.latent_dim, 2 * cfg.latent_dim, 1)

    def forward(
        self, embeddings: torch.Tensor, padding_mask: torch.Tensor | None = None
    ) -> PriorSequence:
        """embeddings: [B, embed_dim, F] (detached upstream) -> prior over [B, latent_dim, F]."""
        if embeddings.shape[1] != self.cfg.embed_dim:
            raise ConfigError(
                f"expected embed_dim {self.cfg.embed_dim}, got {embeddings.shape[1]}"
            )
        h = self.in_proj(embeddings).transpose(1, 2)
        h = self.encoder(h, src_key_padding_mask=padding_mask)
        mean, log_scale = self.out_proj(h.transpose(1, 2)).chunk(2, dim=1)
        return PriorSequence(mean=mean, log_scale=log_scale.clamp(-9.0, 4.0))


class CouplingNet(nn.Module):
    """Dilated conv stack emitting per-channel scale and shift for one coupling."""

    LOG_SCALE_BOUND = 2.0

    def __init__(self, half_dim: int, hidden: int, n_layers: int):
        super().__init__()
        self.pre = nn.Conv1d(half_dim, hidden, 1)
        self.convs = nn.ModuleList(
            nn.Conv1d(hidden, hidden, 3, dilation=2 ** i, padding=2 ** i)
            for i in range(n_layers)
        )
        self.post = nn.Conv1d(hidden, 2 * half_dim, 1)
        # identity start: zero scale/shift until training moves them
        nn.init.zeros_(self.post.weight)
        nn.init.zeros_(self.post.bias)

    def forward(self, x):
        h = self.pre(x)
        for conv in self.convs:
            h = h + conv(F.gelu(h))
        raw_s, t = self.post(h).chunk(2, dim=1)
        # soft clamp keeps exp(log_s) bounded while staying identity near 0
        bound = self.LOG_SCALE_BOUND
        return bound * torch.tanh(raw_s / bound), t


class AffineCouplingLayer(nn.Module):
    """Transforms the second channel half conditioned on the first."""

    def __init__(self, latent_dim: int, hidden: int, n_conv_layers: int):
        super().__init__()
        self.half = latent_dim // 2
        self.net = CouplingNet(self.half, hidden, n_conv_layers)

    def forward(self, z, cond=None):
        z_keep, z_move = z[:, : self.half], z[:, self.half :]
        log_s, t = self.net(z_keep)
        out = torch.cat([z_keep, z_move * torch.exp(log_s) + t], dim=1)
        return out, log_s.sum(dim=1)

    def inverse(self, w, cond=None):
        w_keep, w_move = w[:, : self.half], w[:, self.half :]
        log_s, t = self.net(w_keep)
        return torch.cat([w_keep, (w_move - t) * torch.exp(-log_s)], dim=1)


class CouplingFlow(nn.Module):
    """Stack of channel-flip + affine coupling layers.

    The conditioning argument is reserved in the interface; current layers
    are unconditioned.
    """

    def __init__(self, cfg: ConnectorConfig):
        super().__init__()
        self.cfg = cfg
        self.layers = nn.ModuleList(
            AffineCouplingLayer(cfg.latent_dim, cfg.coupling_hidden, cfg.coupling_conv_layers)
            for _ in range(cfg.n_coupling_layers)
        )

    def forward(self, z: torch.Tensor, cond: torch.Tensor | None = None):
        """z: [B, latent_dim, F] -> (f(z), log_det [B, F])."""
        log_det = torch.zeros(z.shape[0], z.shape[-1], device=z.device, dtype=z.dtype)
        for layer in self.layers:
            z = torch.flip(z, dims=[1])
            z, ld = layer(z, cond)
            log_det = log_det + ld
        return z, log_det

    def inverse(self, w: torch.Tensor, cond: torch.Tensor | None = None) -> torch.Tensor:
        for layer in reversed(self.layers):
            w = layer.inverse(w, cond)
            w = torch.flip(w, dims=[1])
        return w


def kl_loss(
    posterior: GaussianLatent,
    prior: PriorSequence,
    flow: CouplingFlow,
    frame_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Single-sample KL estimate through the flow.

    mean over frames/dims of log q(z|y) - log N(f(z); prior) - log_det(f at z),
    evaluated at z = posterior.sample. frame_mask [B, F] masks padded frames.
    """
    z = posterior.sample
    if z.shape[-1] != prior.mean.shape[-1]:
        raise ConfigError(
            f"frame count mismatch: posterior {z.shape[-1]} vs prior {prior.mean.shape[-1]}"
        )
    f_z, log_det = flow(z)
    per_frame = (
        posterior.log_prob(z).sum(dim=1) - prior.log_prob(f_z).sum(dim=1) - log_det
    )  # [B, F]
    dims = z.shape[1]
    if frame_mask is None:
        return per_frame.mean() / dims
    frame_mask = frame_mask.to(per_frame.dtype)
    per_item = (per_frame * frame_mask).sum(dim=1) / frame_mask.sum(dim=1).clamp_min(1.0)
    return per_item.mean() / dims
