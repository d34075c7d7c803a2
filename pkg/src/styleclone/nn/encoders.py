"""Text encoder and the cascaded U-net speaker/style encoders.

Both specific encoders follow the same extractor/reconstructor pattern:
the extractor squeezes out one mean vector per block (the multi-level
representation), the reconstructor re-injects the levels through
mean-based style normalization in mirror order, forming a skip-connected
U-net across the two stacks.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .primitives import (ConformerBlock, DurationPredictor, FFTBlock,
                         MeanStyleNorm, durations_from_log, length_regulate,
                         mean_instance_norm, sinusoidal_positions)


@dataclass
class MultiLevelEmbedding:
    """Ordered per-block mean vectors and their sum."""
    levels: list[torch.Tensor]

    @property
    def total(self) -> torch.Tensor:
        out = self.levels[0]
        for v in self.levels[1:]:
            out = out + v
        return out

    def __len__(self) -> int:
        return len(self.levels)


def _add_positions(x: torch.Tensor) -> torch.Tensor:
    return x + sinusoidal_positions(x.shape[-2], x.shape[-1], dtype=x.dtype,
                                    device=x.device)


class TextEncoder(nn.Module):
    """Pre-net + conformer trunk + linear projection; speaker/style
    embeddings are linearly projected and broadcast-added after the trunk,
    feeding the duration predictor and the regulated content sequence."""

    def __init__(self, n_phonemes: int, dim: int = 128, n_blocks: int = 6,
                 n_heads: int = 2, ff_dim: int = 256):
        super().__init__()
        self.embed = nn.Embedding(n_phonemes, dim)
        self.prenet = nn.Sequential(nn.Linear(dim, dim), nn.ReLU(),
                                    nn.Linear(dim, dim))
        self.blocks = nn.ModuleList(
            ConformerBlock(dim, n_heads, ff_dim) for _ in range(n_blocks))
        self.proj_out = nn.Linear(dim, dim)
        self.cond_spk = nn.Linear(dim, dim, bias=False)
        self.cond_sty = nn.Linear(dim, dim, bias=False)
        self.duration_predictor = DurationPredictor(dim)

    def trunk(self, phonemes: torch.Tensor) -> torch.Tensor:
        if phonemes.numel() == 0:
            raise ValueError("empty phoneme sequence")
        h = _add_positions(self.prenet(self.embed(phonemes)))
        for block in self.blocks:
            h = block(h)
        return self.proj_out(h)

    def forward(self, phonemes: torch.Tensor, e_spk: torch.Tensor,
                e_sty: torch.Tensor, durations: torch.Tensor | None = None
                ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Returns (content at frame rate, predicted log-durations,
        durations actually used for regulation)."""
        h = self.trunk(phonemes)
        h = h + self.cond_spk(e_spk) + self.cond_sty(e_sty)
        pred_log = self.duration_predictor(h, e_spk, e_sty)
        if durations is None:
            durations = durations_from_log(pred_log.detach())
        else:
            durations = torch.as_tensor(durations, dtype=torch.long)
        content = length_regulate(h, durations)
        return content, pred_log, durations


class UnetExtractor(nn.Module):
    """Block-by-block squeeze: FFT block, then mean-based instance norm.

    The n per-block means are the multi-level representation; the final
    centered sequence is the content-style output of the stack. The stack
    is position-free and strictly frame-equivariant (content-based
    attention, pointwise feed-forward), which makes the level means exact
    time statistics: duplicating every input frame leaves them unchanged.
    """

    def __init__(self, in_dim: int, dim: int, n_blocks: int,
                 n_heads: int = 2, ff_dim: int = 256,
                 out_dim: int | None = None):
        super().__init__()
        self.proj_in = nn.Linear(in_dim, dim)
        self.blocks = nn.ModuleList(
            FFTBlock(dim, n_heads, ff_dim, kernel=1) for _ in range(n_blocks))
        self.proj_out = nn.Linear(dim, out_dim) if out_dim else None

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, MultiLevelEmbedding]:
        h = self.proj_in(x)
        levels = []
        for block in self.blocks:
            h, mean = mean_instance_norm(block(h))
            levels.append(mean)
        out = self.proj_out(h) if self.proj_out is not None else h
        return out, MultiLevelEmbedding(levels)


class UnetReconstructor(nn.Module):
    """Mirror stack: mean-based SALN (conditioned on the paired level)
    before each FFT block; deepest extractor level conditions block 1."""

    def __init__(self, in_dim: int, dim: int, n_blocks: int, out_dim: int,
                 n_heads: int = 2, ff_dim: int = 256):
        super().__init__()
        self.n_blocks = n_blocks
        self.proj_in = nn.Linear(in_dim, dim)
        self.norms = nn.ModuleList(MeanStyleNorm(dim) for _ in range(n_blocks))
        self.blocks = nn.ModuleList(
            FFTBlock(dim, n_heads, ff_dim) for _ in range(n_blocks))
        self.proj_out = nn.Linear(dim, out_dim)

    def forward(self, x: torch.Tensor, levels: MultiLevelEmbedding) -> torch.Tensor:
        if len(levels) != self.n_blocks:
            raise ValueError(
                f"expected {self.n_blocks} level vectors, got {len(levels)}")
        h = _add_positions(self.proj_in(x))
        for i, (norm, block) in enumerate(zip(self.norms, self.blocks)):
            h = block(norm(h, levels.levels[self.n_blocks - 1 - i]))
        return self.proj_out(h)


class SpeakerSpecificEncoder(nn.Module):
    """Extractor: mel -> content (d_model) + 5 levels.
    Reconstructor: content + levels -> style-removed mel."""

    def __init__(self, n_mels: int = 80, dim: int = 128, n_blocks: int = 5,
                 n_heads: int = 2, ff_dim: int = 256):
        super().__init__()
        self.extractor = UnetExtractor(n_mels, dim, n_blocks, n_heads, ff_dim)
        self.reconstructor = UnetReconstructor(dim, dim, n_blocks, n_mels,
                                               n_heads, ff_dim)

    def extract(self, mel: torch.Tensor) -> tuple[torch.Tensor, MultiLevelEmbedding]:
        return self.extractor(mel)

    def reconstruct(self, content: torch.Tensor,
                    levels: MultiLevelEmbedding) -> torch.Tensor:
        return self.reconstructor(content, levels)


class StyleSpecificEncoder(nn.Module):
    """Extractor: mel -> style-removed mel (80) + 4 levels.
    Reconstructor: style-removed mel + levels -> original mel."""

    def __init__(self, n_mels: int = 80, dim: int = 128, n_blocks: int = 4,
                 n_heads: int = 2, ff_dim: int = 256):
        super().__init__()
        self.extractor = UnetExtractor(n_mels, dim, n_blocks, n_heads, ff_dim,
                                       out_dim=n_mels)
        self.reconstructor = UnetReconstructor(n_mels, dim, n_blocks, n_mels,
                                               n_heads, ff_dim)

    def extract(self, mel: torch.Tensor) -> tuple[torch.Tensor, MultiLevelEmbedding]:
        return self.extractor(mel)

    def reconstruct(self, melless: torch.Tensor,
                    levels: MultiLevelEmbedding) -> torch.Tensor:
        return self.reconstructor(melless, levels)
