"""Shared building blocks: mean-only normalization, FFT/conformer blocks,
length regulation and duration prediction.

All blocks accept (T, C) or (B, T, C) tensors and never mix information
across the batch dimension. No dropout anywhere: forward passes are
deterministic given parameters and inputs.
"""

from __future__ import annotations

import math

import torch
from torch import nn


def sinusoidal_positions(n: int, dim: int, dtype=torch.float32,
                         device=None) -> torch.Tensor:
    """Standard transformer position table, shape (n, dim)."""
    pos = torch.arange(n, dtype=dtype, device=device).unsqueeze(1)
    half = torch.arange(0, dim, 2, dtype=dtype, device=device)
    freq = torch.exp(-math.log(10000.0) * half / dim)
    table = torch.zeros(n, dim, dtype=dtype, device=device)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq[: (dim - dim // 2)])
    return table


def mean_instance_norm(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Remove (and return) the per-channel mean over time; no variance.

    x: (..., T, C). Returns (centered, mean) with mean shaped (..., C).
    The identity x == centered + mean[..., None, :] holds exactly.
    """
    mean = x.mean(dim=-2)
    return x - mean.unsqueeze(-2), mean


class MeanStyleNorm(nn.Module):
    """Mean-based style-adaptive normalization.

    Per frame, the channel mean is removed (no variance division) and the
    result is modulated by gamma/beta produced from a conditioning vector.
    gamma starts at exactly 1 and beta at 0, so initialization is an
    identity modulation on frame-centered input.
    """

    def __init__(self, dim: int, cond_dim: int | None = None):
        super().__init__()
        self.scale = nn.Linear(cond_dim or dim, dim)
        self.shift = nn.Linear(cond_dim or dim, dim)
        nn.init.zeros_(self.scale.weight)
        nn.init.zeros_(self.scale.bias)
        nn.init.zeros_(self.shift.weight)
        nn.init.zeros_(self.shift.bias)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if cond.shape[-1] != self.scale.in_features:
            raise ValueError(
                f"conditioning dim {cond.shape[-1]} != {self.scale.in_features}")
        centered = x - x.mean(dim=-1, keepdim=True)
        gamma = 1.0 + self.scale(cond)
        beta = self.shift(cond)
        return gamma.unsqueeze(-2) * centered + beta.unsqueeze(-2)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        if dim % n_heads:
            raise ValueError("dim must be divisible by n_heads")
        self.n_heads = n_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, c = x.shape
        h = self.n_heads
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, t, h, c // h).transpose(1, 2)
        k = k.view(b, t, h, c // h).transpose(1, 2)
        v = v.view(b, t, h, c // h).transpose(1, 2)
        att = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(c // h), dim=-1)
        y = (att @ v).transpose(1, 2).reshape(b, t, c)
        return self.out(y)


def _as_batched(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.dim() == 2:
        return x.unsqueeze(0), True
    return x, False


class FFTBlock(nn.Module):
    """Feed-forward transformer block: self-attention + conv feed-forward,
    both with residual connections and post-norm."""

    def __init__(self, dim: int, n_heads: int = 2, ff_dim: int = 256,
                 kernel: int = 3):
        super().__init__()
        self.attn = SelfAttention(dim, n_heads)
        self.norm1 = nn.LayerNorm(dim)
        self.conv1 = nn.Conv1d(dim, ff_dim, kernel, padding=kernel // 2)
        self.conv2 = nn.Conv1d(ff_dim, dim, 1)
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x, squeeze = _as_batched(x)
        x = self.norm1(x + self.attn(x))
        y = self.conv2(torch.relu(self.conv1(x.transpose(1, 2)))).transpose(1, 2)
        x = self.norm2(x + y)
        return x.squeeze(0) if squeeze else x


class ConformerBlock(nn.Module):
    """Macaron FFN / self-attention / depthwise conv module / FFN."""

    def __init__(self, dim: int, n_heads: int = 2, ff_dim: int = 256,
                 conv_kernel: int = 7):
        super().__init__()
        self.ff1 = nn.Sequential(nn.LayerNorm(dim), nn.Linear(dim, ff_dim),
                                 nn.SiLU(), nn.Linear(ff_dim, dim))
        self.norm_attn = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, n_heads)
        self.norm_conv = nn.LayerNorm(dim)
        self.pointwise1 = nn.Conv1d(dim, 2 * dim, 1)
        self.depthwise = nn.Conv1d(dim, dim, conv_kernel,
                                   padding=conv_kernel // 2, groups=dim)
        self.pointwise2 = nn.Conv1d(dim, dim, 1)
        self.ff2 = nn.Sequential(nn.LayerNorm(dim), nn.Linear(dim, ff_dim),
                                 nn.SiLU(), nn.Linear(ff_dim, dim))
        self.norm_out = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x, squeeze = _as_batched(x)
        x = x + 0.5 * self.ff1(x)
        x = x + self.attn(self.norm_attn(x))
        y = self.pointwise1(self.norm_conv(x).transpose(1, 2))
        y = nn.functional.glu(y, dim=1)
        y = self.pointwise2(torch.nn.functional.silu(self.depthwise(y)))
        x = x + y.transpose(1, 2)
        x = self.norm_out(x + 0.5 * self.ff2(x))
        return x.squeeze(0) if squeeze else x


def length_regulate(hidden: torch.Tensor, durations: torch.Tensor) -> torch.Tensor:
    """Repeat row i of hidden durations[i] times, order preserved.

    hidden: (N, C); durations: (N,) non-negative integers summing to >= 1.
    """
    if hidden.dim() != 2:
        raise ValueError("length_regulate expects a (N, C) phoneme sequence")
    durations = torch.as_tensor(durations, dtype=torch.long, device=hidden.device)
    if (durations < 0).any():
        raise ValueError("durations must be non-negative")
    if int(durations.sum()) < 1:
        raise ValueError("total duration must be at least one frame")
    return torch.repeat_interleave(hidden, durations, dim=0)


class DurationPredictor(nn.Module):
    """Per-phoneme log-domain duration prediction, conditioned on the
    speaker and style embeddings."""

    def __init__(self, dim: int, hidden: int | None = None, kernel: int = 3):
        super().__init__()
        hidden = hidden or dim
        self.proj_spk = nn.Linear(dim, dim, bias=False)
        self.proj_sty = nn.Linear(dim, dim, bias=False)
        self.conv1 = nn.Conv1d(dim, hidden, kernel, padding=kernel // 2)
        self.norm1 = nn.LayerNorm(hidden)
        self.conv2 = nn.Conv1d(hidden, hidden, kernel, padding=kernel // 2)
        self.norm2 = nn.LayerNorm(hidden)
        self.out = nn.Linear(hidden, 1)

    def forward(self, hidden: torch.Tensor, e_spk: torch.Tensor | None = None,
                e_sty: torch.Tensor | None = None) -> torch.Tensor:
        """hidden: (N, C) phoneme-level; returns (N,) log(1+duration)."""
        x = hidden
        if e_spk is not None:
            x = x + self.proj_spk(e_spk)
        if e_sty is not None:
            x = x + self.proj_sty(e_sty)
        x = x.unsqueeze(0).transpose(1, 2)
        x = self.norm1(torch.relu(self.conv1(x)).transpose(1, 2))
        x = self.norm2(torch.relu(self.conv2(x.transpose(1, 2))).transpose(1, 2))
        return self.out(x).squeeze(-1).squeeze(0)


def durations_from_log(pred: torch.Tensor) -> torch.Tensor:
    """Invert the log(1+d) parameterization and round, at least 1 frame."""
    return torch.clamp(torch.round(torch.expm1(pred)), min=1).long()
