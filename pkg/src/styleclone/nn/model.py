"""Full model: text encoder, cascaded specific encoders, score decoder.

Training consumes teacher inputs (ground-truth durations, the text
encoder's content, the perturbation pipeline's style-removed mel);
inference replaces them with predictions. Only the level mean vectors
cross from the references into the synthesis path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .diffusion import DiffusionSchedule, ScoreNet, diffusion_loss, reverse_sample
from .encoders import (MultiLevelEmbedding, SpeakerSpecificEncoder,
                       StyleSpecificEncoder, TextEncoder)


@dataclass
class TrainingItem:
    """One utterance's tensors, already normalized for model input."""
    phonemes: torch.Tensor       # (N,) long
    durations: torch.Tensor      # (N,) long, ground truth
    mel: torch.Tensor            # (T, 80) normalized log-mel
    melless: torch.Tensor        # (T', 80) normalized style-removed log-mel


@dataclass
class LossBreakdown:
    total: torch.Tensor
    l_spk: torch.Tensor
    l_sty: torch.Tensor
    l_diff: torch.Tensor
    l_dur: torch.Tensor


@dataclass
class CloneOutput:
    prior_mel: torch.Tensor
    e_spk: torch.Tensor
    e_sty: torch.Tensor
    content: torch.Tensor
    melless: torch.Tensor
    durations: torch.Tensor
    spk_levels: MultiLevelEmbedding = field(repr=False, default=None)
    sty_levels: MultiLevelEmbedding = field(repr=False, default=None)


class CloningModel(nn.Module):
    def __init__(self, n_phonemes: int = 16, n_mels: int = 80, dim: int = 128,
                 n_text_blocks: int = 6, n_spk_blocks: int = 5,
                 n_sty_blocks: int = 4, n_heads: int = 2, ff_dim: int = 256,
                 score_channels: tuple[int, int, int] = (32, 64, 128),
                 beta_0: float = 0.05, beta_1: float = 20.0,
                 t_min: float = 1e-3):
        super().__init__()
        self.dim = dim
        self.text_encoder = TextEncoder(n_phonemes, dim, n_text_blocks,
                                        n_heads, ff_dim)
        self.speaker_encoder = SpeakerSpecificEncoder(n_mels, dim,
                                                      n_spk_blocks, n_heads, ff_dim)
        self.style_encoder = StyleSpecificEncoder(n_mels, dim, n_sty_blocks,
                                                  n_heads, ff_dim)
        self.score_net = ScoreNet(n_mels, dim, score_channels)
        self.schedule = DiffusionSchedule(beta_0, beta_1, t_min)

    def block_counts(self) -> dict:
        return {
            "text": len(self.text_encoder.blocks),
            "speaker_extractor": len(self.speaker_encoder.extractor.blocks),
            "speaker_reconstructor": len(self.speaker_encoder.reconstructor.blocks),
            "style_extractor": len(self.style_encoder.extractor.blocks),
            "style_reconstructor": len(self.style_encoder.reconstructor.blocks),
        }

    def item_losses(self, item: TrainingItem, w_spk: float = 0.8,
                    generator: torch.Generator | None = None,
                    t_fixed: float | None = None,
                    noise_fixed: torch.Tensor | None = None) -> LossBreakdown:
        """Joint objective on one utterance: w_spk*L_spk + L_sty + L_diff + L_dur.

        The diffusion term is normalized per element so all terms share the
        mean-squared scale regardless of utterance length.
        """
        content_hat, spk_levels = self.speaker_encoder.extract(item.mel)
        melless_hat_sty, sty_levels = self.style_encoder.extract(item.mel)
        e_spk = spk_levels.total
        e_sty = sty_levels.total

        content, pred_log_dur, _ = self.text_encoder(
            item.phonemes, e_spk, e_sty, durations=item.durations)
        melless_hat_spk = self.speaker_encoder.reconstruct(content, spk_levels)
        mel_hat = self.style_encoder.reconstruct(item.melless, sty_levels)

        melless_t = _match_frames(item.melless, content_hat.shape[0])
        l_spk = compute_l_spk(content_hat, content,
                              _match_frames(melless_hat_spk, melless_t.shape[0]),
                              melless_t)
        l_sty = compute_l_sty(_match_frames(melless_hat_sty, melless_t.shape[0]),
                              melless_t,
                              _match_frames(mel_hat, item.mel.shape[0]), item.mel)
        l_dur = duration_loss(pred_log_dur, item.durations)
        prior = _match_frames(mel_hat, item.mel.shape[0])
        raw = diffusion_loss(item.mel, prior, e_spk, e_sty, self.score_net,
                             self.schedule, generator=generator, t=t_fixed,
                             noise=noise_fixed)
        l_diff = raw / item.mel.numel()
        total = w_spk * l_spk + l_sty + l_diff + l_dur
        return LossBreakdown(total, l_spk, l_sty, l_diff, l_dur)

    @torch.no_grad()
    def clone(self, phonemes: torch.Tensor, speaker_ref_mel: torch.Tensor,
              style_ref_mel: torch.Tensor) -> CloneOutput:
        """Inference path up to the diffusion prior; deterministic."""
        _, spk_levels = self.speaker_encoder.extract(speaker_ref_mel)
        _, sty_levels = self.style_encoder.extract(style_ref_mel)
        e_spk = spk_levels.total
        e_sty = sty_levels.total
        content, _, durations = self.text_encoder(phonemes, e_spk, e_sty)
        melless = self.speaker_encoder.reconstruct(content, spk_levels)
        prior = self.style_encoder.reconstruct(melless, sty_levels)
        return CloneOutput(prior, e_spk, e_sty, content, melless, durations,
                           spk_levels, sty_levels)

    def clone_differentiable(self, phonemes: torch.Tensor,
                             speaker_ref_mel: torch.Tensor,
                             style_ref_mel: torch.Tensor,
                             durations: torch.Tensor) -> torch.Tensor:
        """Gradient-friendly clone path with fixed durations."""
        _, spk_levels = self.speaker_encoder.extract(speaker_ref_mel)
        _, sty_levels = self.style_encoder.extract(style_ref_mel)
        content, _, _ = self.text_encoder(phonemes, spk_levels.total,
                                          sty_levels.total, durations=durations)
        melless = self.speaker_encoder.reconstruct(content, spk_levels)
        return self.style_encoder.reconstruct(melless, sty_levels)

    @torch.no_grad()
    def sample(self, prior: torch.Tensor, e_spk: torch.Tensor,
               e_sty: torch.Tensor, n_steps: int = 50,
               generator: torch.Generator | None = None) -> torch.Tensor:
        return reverse_sample(prior, e_spk, e_sty, self.score_net,
                              self.schedule, n_steps, generator)


def _match_frames(x: torch.Tensor, n: int) -> torch.Tensor:
    """Trim or zero-pad along time so paired terms share a frame count.

    The perturbation pipeline preserves duration within one frame; this
    guards the loss against that off-by-one.
    """
    if x.shape[0] == n:
        return x
    if x.shape[0] > n:
        return x[:n]
    pad = x.new_zeros(n - x.shape[0], x.shape[1])
    return torch.cat([x, pad], dim=0)


def compute_l_spk(content_hat: torch.Tensor, content: torch.Tensor,
                  melless_hat: torch.Tensor, melless: torch.Tensor) -> torch.Tensor:
    """Speaker-path loss: content match plus style-removed mel match (MSE)."""
    if content_hat.shape != content.shape or melless_hat.shape != melless.shape:
        raise ValueError("loss terms require matching shapes")
    return torch.mean((content_hat - content) ** 2) + torch.mean(
        (melless_hat - melless) ** 2)


def compute_l_sty(melless_hat: torch.Tensor, melless: torch.Tensor,
                  mel_hat: torch.Tensor, mel: torch.Tensor) -> torch.Tensor:
    """Style-path loss: style-removed match plus original mel match (MSE)."""
    if melless_hat.shape != melless.shape or mel_hat.shape != mel.shape:
        raise ValueError("loss terms require matching shapes")
    return torch.mean((melless_hat - melless) ** 2) + torch.mean(
        (mel_hat - mel) ** 2)


def duration_loss(pred_log: torch.Tensor, durations: torch.Tensor) -> torch.Tensor:
    """MSE in the log(1+d) domain."""
    target = torch.log1p(durations.to(pred_log.dtype))
    return torch.mean((pred_log - target) ** 2)
