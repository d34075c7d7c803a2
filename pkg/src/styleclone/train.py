"""Joint training on the toy corpus.

The objective composes the speaker-path, style-path, diffusion and
duration terms with the 0.8 weight on the speaker path. Batches, feature
preparation and the per-step diffusion draws are all derived statelessly
from (seed, step), so a resumed run reproduces an uninterrupted one
bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .audio import mel_spectrogram
from .corpus import Corpus, ManifestEntry, load_corpus, phoneme_id
from .nn.model import CloningModel, LossBreakdown, TrainingItem
from .perturb import perturb_utterance
from .pitch import sample_ratio


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    corpus_dir: str
    ckpt_dir: str
    d_model: int = 128
    n_text_blocks: int = 6
    n_spk_blocks: int = 5
    n_sty_blocks: int = 4
    n_heads: int = 2
    ff_dim: int = 256
    score_channels: tuple = (32, 64, 128)
    batch_size: int = 8
    learning_rate: float = 1e-4
    total_steps: int = 2000
    w_spk: float = 0.8
    beta_0: float = 0.05
    beta_1: float = 20.0
    t_min: float = 1e-3
    grad_clip: float = 1.0
    seed: int = 7
    log_every: int = 1
    ckpt_every: int = 2000

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["score_channels"] = list(self.score_channels)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        d = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "score_channels" in d:
            d["score_channels"] = tuple(d["score_channels"])
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        return cls.from_json(Path(path).read_text())


def build_model(config: TrainConfig, n_phonemes: int) -> CloningModel:
    return CloningModel(
        n_phonemes=n_phonemes, n_mels=80, dim=config.d_model,
        n_text_blocks=config.n_text_blocks, n_spk_blocks=config.n_spk_blocks,
        n_sty_blocks=config.n_sty_blocks, n_heads=config.n_heads,
        ff_dim=config.ff_dim, score_channels=tuple(config.score_channels),
        beta_0=config.beta_0, beta_1=config.beta_1, t_min=config.t_min)


def _utt_hash(utt_id: str) -> int:
    return zlib.crc32(utt_id.encode()) & 0x7FFFFFFF


class FeatureStore:
    """Normalized mel and style-removed mel per utterance, disk-cached.

    The style-removal ratio is drawn per utterance from (seed, utt_id), so
    the cache is deterministic and shared by resumed runs.
    """

    def __init__(self, corpus: Corpus, cache_dir: str | Path, seed: int):
        self.corpus = corpus
        self.cache = Path(cache_dir)
        self.cache.mkdir(parents=True, exist_ok=True)
        self.seed = seed
        self.mel_mean, self.mel_std = self._stats()

    def _stats(self) -> tuple[np.ndarray, np.ndarray]:
        path = self.cache / "mel_stats.npz"
        if path.exists():
            data = np.load(path)
            return data["mean"], data["std"]
        acc = []
        for entry in self.corpus.train:
            acc.append(self.corpus.mel_of(entry).frames)
        frames = np.concatenate(acc, axis=0)
        mean = frames.mean(axis=0)
        std = np.maximum(frames.std(axis=0), 1e-3)
        np.savez(path, mean=mean, std=std)
        return mean, std

    def normalize(self, frames: np.ndarray) -> np.ndarray:
        return (frames - self.mel_mean) / self.mel_std

    def denormalize(self, frames: np.ndarray) -> np.ndarray:
        return frames * self.mel_std + self.mel_mean

    def item(self, entry: ManifestEntry) -> TrainingItem:
        path = self.cache / f"{entry.utt_id}.npz"
        if path.exists():
            data = np.load(path)
            mel, melless = data["mel"], data["melless"]
        else:
            utt = self.corpus.load_utterance(entry)
            mel = mel_spectrogram(utt.wave).frames
            ratio = sample_ratio(
                np.random.default_rng([self.seed, _utt_hash(entry.utt_id)]))
            _, melless_mel = perturb_utterance(utt.wave, ratio=ratio)
            mel = self.normalize(mel).astype(np.float32)
            melless = self.normalize(melless_mel.frames).astype(np.float32)
            np.savez(path, mel=mel, melless=melless)
        phonemes = torch.tensor([phoneme_id(p) for p in entry.phonemes])
        return TrainingItem(
            phonemes=phonemes,
            durations=torch.tensor(entry.durations, dtype=torch.long),
            mel=torch.from_numpy(np.ascontiguousarray(mel)).float(),
            melless=torch.from_numpy(np.ascontiguousarray(melless)).float())


def save_checkpoint(path: str | Path, model: CloningModel,
                    optimizer: torch.optim.Optimizer | None,
                    config: TrainConfig, step: int,
                    mel_mean: np.ndarray, mel_std: np.ndarray) -> None:
    payload = {
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer else None,
        "config": json.loads(config.to_json()),
        "step": step,
        "seed": config.seed,
        "mel_mean": mel_mean,
        "mel_std": mel_std,
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    config = TrainConfig.from_json(json.dumps(payload["config"]))
    model = build_model(config, n_phonemes=16)
    model.load_state_dict(payload["model"])
    model.eval()
    payload["config_obj"] = config
    payload["model_obj"] = model
    return payload


@dataclass
class TrainResult:
    model: CloningModel
    store: FeatureStore
    config: TrainConfig
    metrics: list[tuple]
    ckpt_path: Path


def _batch_entries(train: list, step: int, seed: int, batch_size: int) -> list:
    rng = np.random.default_rng([seed, step])
    idx = rng.choice(len(train), size=batch_size, replace=len(train) < batch_size)
    return [train[i] for i in idx]


def _step_generator(seed: int, step: int) -> torch.Generator:
    return torch.Generator().manual_seed((seed * 1_000_003 + step) % (2 ** 62))


def train(config: TrainConfig, resume_from: str | Path | None = None,
          log_file: str | Path | None = None) -> TrainResult:
    corpus = load_corpus(config.corpus_dir)
    ckpt_dir = Path(config.ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    store = FeatureStore(corpus, ckpt_dir / "features", config.seed)

    torch.manual_seed(config.seed)
    model = build_model(config, n_phonemes=len(corpus.meta["phoneme_inventory"]))
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    start_step = 0
    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        model.load_state_dict(payload["model"])
        optimizer.load_state_dict(payload["optimizer"])
        start_step = payload["step"]
    model.train()

    metrics: list[tuple] = []
    log_path = Path(log_file) if log_file else ckpt_dir / "metrics.log"
    mode = "a" if start_step else "w"
    with open(log_path, mode) as log:
        for step in range(start_step + 1, config.total_steps + 1):
            entries = _batch_entries(corpus.train, step, config.seed,
                                     config.batch_size)
            gen = _step_generator(config.seed, step)
            parts = torch.zeros(5, dtype=torch.float64)
            optimizer.zero_grad()
            for entry in entries:
                item = store.item(entry)
                lb = model.item_losses(item, w_spk=config.w_spk, generator=gen)
                (lb.total / len(entries)).backward()
                parts += torch.tensor([lb.total.item(), lb.l_spk.item(),
                                       lb.l_sty.item(), lb.l_diff.item(),
                                       lb.l_dur.item()], dtype=torch.float64)
            parts /= len(entries)
            if not torch.isfinite(parts).all():
                raise TrainingDiverged(
                    f"non-finite loss at step {step}: {parts.tolist()}")
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            if step % config.log_every == 0 or step == config.total_steps:
                row = (step, *[float(v) for v in parts])
                metrics.append(row)
                log.write("%d\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\n" % row)
                log.flush()
            if step % config.ckpt_every == 0 or step == config.total_steps:
                save_checkpoint(ckpt_dir / f"ckpt_{step:06d}.pt", model,
                                optimizer, config, step, store.mel_mean,
                                store.mel_std)

    model.eval()
    final = ckpt_dir / f"ckpt_{config.total_steps:06d}.pt"
    return TrainResult(model, store, config, metrics, final)
