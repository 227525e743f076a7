"""Diagonal state-space sequence layers.

The linear state-space system is applied as a length-L causal convolution
whose kernel is computed from the ZOH-discretized diagonal system. State
matrices are initialized from the diagonal part of the HiPPO-LegS operator
with log-spaced per-channel timescales.
"""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


def hippo_legs_diag(state_dim: int) -> np.ndarray:
    """Eigenvalues (positive-imaginary half) of the normal part of HiPPO-LegS.

    Returns state_dim // 2 complex values with negative real part.
    """
    n = np.arange(state_dim)
    # Skew-symmetric normal part plus the -1/2 diagonal shift
    a = -np.sqrt(np.outer(2 * n + 1, 2 * n + 1)) / 2.0
    a = np.tril(a, -1) - np.tril(a, -1).T
    a = a - 0.5 * np.eye(state_dim)
    eig = np.linalg.eigvals(a)
    eig = eig[np.argsort(eig.imag)]
    return eig[eig.imag >= 0][: state_dim // 2]


class S4DKernel(nn.Module):
    """Per-channel diagonal SSM convolution kernel (ZOH discretization)."""

    def __init__(self, d_model: int, state_dim: int = 64,
                 dt_min: float = 1e-3, dt_max: float = 1e-1):
        super().__init__()
        half = state_dim // 2
        eig = hippo_legs_diag(state_dim)
        log_a_real = torch.log(-torch.tensor(eig.real, dtype=torch.float32).clamp(max=-1e-4))
        a_imag = torch.tensor(eig.imag, dtype=torch.float32)
        self.log_a_real = nn.Parameter(log_a_real.repeat(d_model, 1))
        self.a_imag = nn.Parameter(a_imag.repeat(d_model, 1))
        c = torch.randn(d_model, half, 2) * math.sqrt(0.5)
        self.c = nn.Parameter(c)
        log_dt = torch.rand(d_model) * (math.log(dt_max) - math.log(dt_min)) + math.log(dt_min)
        self.log_dt = nn.Parameter(log_dt)
        self.d = nn.Parameter(torch.ones(d_model))

    def discretized(self):
        """ZOH Abar, Bbar (with B = 1) and output map C, all [H, N/2] complex."""
        dt = torch.exp(self.log_dt)[:, None]
        a = -torch.exp(self.log_a_real) + 1j * self.a_imag
        abar = torch.exp(a * dt)
        bbar = (abar - 1.0) / a
        c = torch.view_as_complex(self.c)
        return abar, bbar, c

    def kernel(self, length: int) -> torch.Tensor:
        """Convolution kernel [H, length]."""
        dt = torch.exp(self.log_dt)[:, None]
        a = -torch.exp(self.log_a_real) + 1j * self.a_imag
        dta = a * dt
        bbar = (torch.exp(dta) - 1.0) / a
        c = torch.view_as_complex(self.c)
        steps = torch.arange(length, device=dta.device)
        vander = torch.exp(dta[:, :, None] * steps)  # [H, N/2, L]
        k = 2.0 * torch.einsum("hn,hnl->hl", c * bbar, vander).real
        return k

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        """Causal convolution of u [B, H, L] with the SSM kernel, plus skip."""
        length = u.shape[-1]
        k = self.kernel(length)
        return causal_conv(u, k) + self.d[:, None] * u


def causal_conv(u: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """FFT-based causal convolution of [B, H, L] with per-channel kernels [H, L]."""
    length = u.shape[-1]
    n_fft = 2 * length
    u_f = torch.fft.rfft(u, n=n_fft)
    k_f = torch.fft.rfft(k, n=n_fft)
    return torch.fft.irfft(u_f * k_f, n=n_fft)[..., :length]


class S4Layer(nn.Module):
    """SSM kernel estimator followed by GLU, dropout, layer norm, residual."""

    def __init__(self, d_model: int, state_dim: int = 64, dropout: float = 0.1):
        super().__init__()
        self.kernel = S4DKernel(d_model, state_dim)
        self.out_proj = nn.Conv1d(d_model, 2 * d_model, kernel_size=1)
        self.dropout = nn.Dropout(dropout)
        self.norm = nn.LayerNorm(d_model)

    def ssm_conv(self, u: torch.Tensor) -> torch.Tensor:
        """Pre-activation SSM convolution output, skip term excluded."""
        return causal_conv(u, self.kernel.kernel(u.shape[-1]))

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        y = self.kernel(u)
        y = F.glu(self.out_proj(y), dim=1)
        y = self.dropout(y)
        y = self.norm((u + y).transpose(1, 2)).transpose(1, 2)
        return y
