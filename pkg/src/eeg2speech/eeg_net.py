"""Self-supervised EEG autoencoder.

Encoder: strided conv blocks followed by S4 layers, projecting multichannel
EEG into a per-frame embedding sequence. Decoder: transposed-conv blocks
reconstructing the input channels. Trained with the per-channel cosine loss.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError
from .s4 import S4Layer


@dataclass
class EegEncoderConfig:
    n_channels_in: int = 128
    hidden_dim: int = 192
    n_conv_blocks: int = 4
    conv_strides: list[int] = field(default_factory=lambda: [1, 3, 1, 1])
    n_s4_layers: int = 2
    s4_state_dim: int = 64
    dropout: float = 0.1
    embed_dim: int = 192

    def __post_init__(self):
        if len(self.conv_strides) != self.n_conv_blocks:
            raise ConfigError("conv_strides length must equal n_conv_blocks")

    @property
    def downsample_factor(self) -> int:
        return math.prod(self.conv_strides)


class ConvBlock(nn.Module):
    """1D convolution, dropout, layer norm, GELU. Output length ceil(L / stride)."""

    def __init__(self, c_in: int, c_out: int, stride: int, dropout: float):
        super().__init__()
        kernel = 2 * stride + 1 if stride > 1 else 5
        self.conv = nn.Conv1d(c_in, c_out, kernel, stride=stride, padding=kernel // 2)
        self.dropout = nn.Dropout(dropout)
        self.norm = nn.LayerNorm(c_out)

    def forward(self, x):
        x = self.conv(x)
        x = self.dropout(x)
        x = self.norm(x.transpose(1, 2)).transpose(1, 2)
        return F.gelu(x)


class DeconvBlock(nn.Module):
    """1D transposed convolution, dropout, layer norm, GELU. Length L * stride."""

    def __init__(self, c_in: int, c_out: int, stride: int, dropout: float, activate: bool = True):
        super().__init__()
        kernel = 2 * stride + 1 if stride > 1 else 5
        self.conv = nn.ConvTranspose1d(
            c_in, c_out, kernel, stride=stride,
            padding=kernel // 2, output_padding=stride - 1,
        )
        self.dropout = nn.Dropout(dropout)
        self.norm = nn.LayerNorm(c_out)
        self.activate = activate

    def forward(self, x):
        x = self.conv(x)
        x = self.dropout(x)
        x = self.norm(x.transpose(1, 2)).transpose(1, 2)
        return F.gelu(x) if self.activate else x


class EegEncoder(nn.Module):
    def __init__(self, cfg: EegEncoderConfig):
        super().__init__()
        self.cfg = cfg
        blocks = []
        c_in = cfg.n_channels_in
        for stride in cfg.conv_strides:
            blocks.append(ConvBlock(c_in, cfg.hidden_dim, stride, cfg.dropout))
            c_in = cfg.hidden_dim
        self.conv_blocks = nn.ModuleList(blocks)
        self.s4_layers = nn.ModuleList(
            S4Layer(cfg.hidden_dim, cfg.s4_state_dim, cfg.dropout)
            for _ in range(cfg.n_s4_layers)
        )
        self.proj = nn.Conv1d(cfg.hidden_dim, cfg.embed_dim, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: [B, n_channels_in, T] -> embeddings [B, embed_dim, ceil(T / ds)]."""
        if x.shape[1] != self.cfg.n_channels_in:
            raise ConfigError(
                f"expected {self.cfg.n_channels_in} EEG channels, got {x.shape[1]}"
            )
        for block in self.conv_blocks:
            x = block(x)
        for layer in self.s4_layers:
            x = layer(x)
        return self.proj(x)


class EegDecoder(nn.Module):
    def __init__(self, cfg: EegEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.proj = nn.Conv1d(cfg.embed_dim, cfg.hidden_dim, 1)
        self.deconv_blocks = nn.ModuleList(
            DeconvBlock(cfg.hidden_dim, cfg.hidden_dim, stride, cfg.dropout)
            for stride in reversed(cfg.conv_strides)
        )
        self.out = nn.Conv1d(cfg.hidden_dim, cfg.n_channels_in, 5, padding=2)

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        """e: [B, embed_dim, F] -> reconstruction [B, n_channels_in, F * ds]."""
        if e.shape[1] != self.cfg.embed_dim:
            raise ConfigError(f"expected embed_dim {self.cfg.embed_dim}, got {e.shape[1]}")
        x = self.proj(e)
        for block in self.deconv_blocks:
            x = block(x)
        return self.out(x)


class EegAutoencoder(nn.Module):
    def __init__(self, cfg: EegEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = EegEncoder(cfg)
        self.decoder = EegDecoder(cfg)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def decode(self, e: torch.Tensor) -> torch.Tensor:
        return self.decoder(e)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))


def cosine_reconstruction_loss(
    x: torch.Tensor, x_hat: torch.Tensor, lengths: torch.Tensor | None = None
) -> torch.Tensor:
    """1 - mean per-channel cosine similarity; range [0, 2].

    Zero-norm channels contribute cosine 0 (loss 1) instead of dividing by
    zero. With lengths given, padded timesteps are masked out and the loss
    is averaged per item before averaging over the batch.
    """
    if x.shape != x_hat.shape:
        raise ConfigError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    if x.dim() == 2:
        x = x[None]
        x_hat = x_hat[None]
    if lengths is not None:
        t = torch.arange(x.shape[-1], device=x.device)
        mask = (t[None, :] < lengths[:, None]).to(x.dtype)[:, None, :]
        x = x * mask
        x_hat = x_hat * mask
    dot = (x * x_hat).sum(dim=-1)
    norm = x.norm(dim=-1) * x_hat.norm(dim=-1)
    cos = torch.where(norm > 0, dot / norm.clamp_min(1e-12), torch.zeros_like(dot))
    return (1.0 - cos.mean(dim=1)).mean()
