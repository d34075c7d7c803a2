"""Synthetic parametric speech corpus.

Each utterance is a phoneme string rendered as a harmonic source at a
style-modulated pitch, filtered by a speaker- and phoneme-dependent
spectral envelope. "Fricative" phonemes are envelope-shaped noise and are
unvoiced. Pitch, envelope, phonemes and durations are all known exactly,
which gives the test suite closed-form oracles.

Speaker identity = envelope template + base pitch register (fixed per
speaker). Style identity = pitch-contour shape + speaking speed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import (HOP, SAMPLE_RATE, MelSpectrogram, Waveform, hz_to_mel,
                    load_mel, load_wav, mel_center_freqs, mel_spectrogram,
                    save_mel, save_wav)
from .pitch import PitchContour, load_contour, save_contour

FRAME_S = HOP / SAMPLE_RATE

VOICED_PHONEMES = ["aa", "ae", "ah", "ee", "eh", "ii", "oh", "oo", "uu", "er", "ay", "ow"]
FRICATIVE_PHONEMES = ["ss", "sh", "ff", "hh"]
PHONEME_INVENTORY = VOICED_PHONEMES + FRICATIVE_PHONEMES
_PH_INDEX = {p: i for i, p in enumerate(PHONEME_INVENTORY)}

_MAX_HARMONIC_HZ = 7600.0
_PEAK = 0.35


def phoneme_id(symbol: str) -> int:
    if symbol not in _PH_INDEX:
        raise ValueError(f"unknown phoneme {symbol!r}")
    return _PH_INDEX[symbol]


def is_voiced_phoneme(symbol: str) -> bool:
    return symbol in _PH_INDEX and _PH_INDEX[symbol] < len(VOICED_PHONEMES)


@dataclass
class SpeakerSpec:
    """Fixed per-speaker timbre: envelope template + pitch register."""
    speaker_id: int
    base_f0_hz: float
    envelope_params: np.ndarray  # [tilt, c1, g1, w1, c2, g2, w2, c3, g3, w3] (mel units)

    def to_dict(self) -> dict:
        return {"speaker_id": self.speaker_id, "base_f0_hz": self.base_f0_hz,
                "envelope_params": [float(v) for v in self.envelope_params]}

    @classmethod
    def from_dict(cls, d: dict) -> "SpeakerSpec":
        return cls(d["speaker_id"], d["base_f0_hz"], np.asarray(d["envelope_params"]))


@dataclass
class StyleSpec:
    """Per-style prosody: pitch contour family + speaking-speed scale.

    log2 pitch multiplier at time t (seconds):
        clip(slope * (t - 0.6) + vib_amp * sin(2 pi t / vib_period + vib_phase), -0.5, 0.5)
    """
    style_id: int
    slope_oct_per_s: float
    vib_amp_oct: float
    vib_period_s: float
    vib_phase: float
    duration_scale: float

    def log2_multiplier(self, t_s: np.ndarray) -> np.ndarray:
        t = np.asarray(t_s, dtype=np.float64)
        val = (self.slope_oct_per_s * (t - 0.6)
               + self.vib_amp_oct * np.sin(2.0 * np.pi * t / self.vib_period_s + self.vib_phase))
        return np.clip(val, -0.5, 0.5)

    def to_dict(self) -> dict:
        return {"style_id": self.style_id, "slope_oct_per_s": self.slope_oct_per_s,
                "vib_amp_oct": self.vib_amp_oct, "vib_period_s": self.vib_period_s,
                "vib_phase": self.vib_phase, "duration_scale": self.duration_scale}

    @classmethod
    def from_dict(cls, d: dict) -> "StyleSpec":
        return cls(d["style_id"], d["slope_oct_per_s"], d["vib_amp_oct"],
                   d["vib_period_s"], d["vib_phase"], d["duration_scale"])


def make_speaker(speaker_id: int, n_speakers: int, rng: np.random.Generator) -> SpeakerSpec:
    # registers log-spaced over 110..260 Hz with a little per-speaker jitter
    lo, hi = np.log(110.0), np.log(260.0)
    frac = speaker_id / max(n_speakers - 1, 1)
    base = float(np.exp(lo + frac * (hi - lo)) * 2.0 ** rng.uniform(-0.04, 0.04))
    # tilt and bump centers stratified by speaker index so any two templates
    # differ in several features, not just by chance
    n = max(n_speakers, 2)
    tilt = -0.45 - 1.2 * (((speaker_id * 2 + 1) % n) + rng.uniform(0.2, 0.8)) / n
    s1 = ((speaker_id * 3 + 1) % n + rng.uniform(0.2, 0.8)) / n
    s2 = ((speaker_id * 5 + 2) % n + rng.uniform(0.2, 0.8)) / n
    s3 = ((speaker_id * 7 + 3) % n + rng.uniform(0.2, 0.8)) / n
    m1_lo, m1_hi = hz_to_mel(420.0), hz_to_mel(1400.0)
    m2_lo, m2_hi = hz_to_mel(1600.0), hz_to_mel(3000.0)
    m3_lo, m3_hi = hz_to_mel(3400.0), hz_to_mel(6200.0)
    c1 = m1_lo + s1 * (m1_hi - m1_lo)
    c2 = m2_lo + s2 * (m2_hi - m2_lo)
    c3 = m3_lo + s3 * (m3_hi - m3_lo)
    g1 = rng.uniform(1.4, 2.1)
    w1 = rng.uniform(110.0, 160.0)
    g2 = rng.uniform(1.4, 2.1)
    w2 = rng.uniform(120.0, 180.0)
    g3 = rng.uniform(1.4, 2.1)
    w3 = rng.uniform(130.0, 200.0)
    return SpeakerSpec(speaker_id, base,
                       np.array([tilt, c1, g1, w1, c2, g2, w2, c3, g3, w3]))


def make_style(style_id: int, rng: np.random.Generator) -> StyleSpec:
    if style_id == 0:
        return StyleSpec(0, 0.0, 0.0, 1.0, 0.0, 1.0)
    sign = 1.0 if style_id % 2 == 1 else -1.0
    slope = sign * rng.uniform(0.14, 0.28)
    vib = rng.uniform(0.08, 0.24)
    period = rng.uniform(0.7, 1.2)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    scale = float(rng.uniform(0.72, 1.45))
    return StyleSpec(style_id, slope, vib, period, phase, scale)


def speaker_log_envelope(params: np.ndarray, freqs_hz: np.ndarray) -> np.ndarray:
    tilt = params[0]
    m = hz_to_mel(freqs_hz)
    env = tilt * np.log1p(np.asarray(freqs_hz) / 500.0)
    for c, g, w in params[1:].reshape(-1, 3):
        env = env + g * np.exp(-0.5 * ((m - c) / w) ** 2)
    return env


# voiced phonemes get two formant-like bumps; fricatives one high band
_VOICED_F1 = np.linspace(320.0, 880.0, len(VOICED_PHONEMES))
_VOICED_F2 = 1150.0 + 1450.0 * ((np.arange(len(VOICED_PHONEMES)) * 5) % 12) / 11.0
_FRIC_CENTER = np.linspace(2600.0, 6200.0, len(FRICATIVE_PHONEMES))


def phoneme_log_envelope(ph: int, freqs_hz: np.ndarray) -> np.ndarray:
    m = hz_to_mel(freqs_hz)
    if ph < len(VOICED_PHONEMES):
        b1 = 1.8 * np.exp(-0.5 * ((m - hz_to_mel(_VOICED_F1[ph])) / 120.0) ** 2)
        b2 = 1.5 * np.exp(-0.5 * ((m - hz_to_mel(_VOICED_F2[ph])) / 130.0) ** 2)
        return b1 + b2
    k = ph - len(VOICED_PHONEMES)
    return 2.0 * np.exp(-0.5 * ((m - hz_to_mel(_FRIC_CENTER[k])) / 160.0) ** 2)


def combined_log_envelope(speaker: SpeakerSpec, ph: int, freqs_hz: np.ndarray) -> np.ndarray:
    return speaker_log_envelope(speaker.envelope_params, freqs_hz) + phoneme_log_envelope(ph, freqs_hz)


def phoneme_base_frames(ph: int) -> int:
    if ph < len(VOICED_PHONEMES):
        return 4 + ph % 5
    return 3 + (ph - len(VOICED_PHONEMES)) % 3


def phoneme_durations(phonemes: list[int], style: StyleSpec) -> np.ndarray:
    """Ground-truth per-phoneme frame counts (deterministic)."""
    base = np.array([phoneme_base_frames(p) for p in phonemes], dtype=np.float64)
    return np.maximum(1, np.round(base * style.duration_scale)).astype(np.int64)


@dataclass
class Utterance:
    utt_id: str
    wave: Waveform
    phonemes: list[str]
    durations: np.ndarray
    speaker_id: int
    style_id: int
    contour: PitchContour          # ground truth
    envelope_frames: np.ndarray    # (T, 80) ground-truth log envelope at mel centers
    speaker: SpeakerSpec | None = None
    style: StyleSpec | None = None

    @property
    def n_frames(self) -> int:
        return int(np.sum(self.durations))


def additive_synth(f0_per_sample: np.ndarray, voiced_mask: np.ndarray,
                   amp_of_harmonic) -> np.ndarray:
    """Sum of harmonics with per-sample instantaneous frequency.

    amp_of_harmonic(h, freqs_hz) returns the per-sample amplitude of
    harmonic h evaluated at its instantaneous frequency.
    """
    n = f0_per_sample.size
    out = np.zeros(n)
    if not voiced_mask.any():
        return out
    phase = 2.0 * np.pi * np.cumsum(np.where(voiced_mask, f0_per_sample, 0.0)) / SAMPLE_RATE
    f0_voiced = f0_per_sample[voiced_mask]
    max_h = int(_MAX_HARMONIC_HZ / max(f0_voiced.min(), 1.0))
    for h in range(1, max_h + 1):
        freqs = h * f0_per_sample
        amps = amp_of_harmonic(h, freqs) * _rolloff(freqs)
        if not np.any(amps > 1e-8):
            continue
        out += np.where(voiced_mask, amps * np.sin(h * phase), 0.0)
    return out


def _rolloff(freqs_hz: np.ndarray) -> np.ndarray:
    """Cosine taper from 7000 Hz to the harmonic ceiling (avoids dropout clicks)."""
    x = np.clip((freqs_hz - 7000.0) / (_MAX_HARMONIC_HZ - 7000.0), 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * x))


def _edge_fade(n: int, fade: int = 40) -> np.ndarray:
    win = np.ones(n)
    k = min(fade, n // 2)
    if k > 0:
        ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(k) / k))
        win[:k] = ramp
        win[n - k:] = ramp[::-1]
    return win


def render_utterance(speaker: SpeakerSpec, style: StyleSpec, phonemes: list[str],
                     noise_seed: int, utt_id: str = "", style_id: int | None = None,
                     f0_const_hz: float | None = None) -> Utterance:
    """Render one utterance; f0_const_hz overrides the style contour (flat pitch)."""
    ph_ids = [phoneme_id(p) for p in phonemes]
    durations = phoneme_durations(ph_ids, style)
    T = int(durations.sum())
    n = T * HOP

    bounds = np.concatenate([[0], np.cumsum(durations)])
    frame_ph = np.empty(T, dtype=np.int64)
    for k, p in enumerate(ph_ids):
        frame_ph[bounds[k]:bounds[k + 1]] = p
    frame_voiced = frame_ph < len(VOICED_PHONEMES)

    t_frames = (np.arange(T) + 0.5) * FRAME_S
    if f0_const_hz is None:
        f0_frames = speaker.base_f0_hz * 2.0 ** style.log2_multiplier(t_frames)
    else:
        f0_frames = np.full(T, float(f0_const_hz))
    f0_frames = np.where(frame_voiced, f0_frames, 0.0)

    sample_t = (np.arange(n) + 0.5) / SAMPLE_RATE
    if f0_const_hz is None:
        f0_samples = speaker.base_f0_hz * 2.0 ** style.log2_multiplier(sample_t)
    else:
        f0_samples = np.full(n, float(f0_const_hz))
    voiced_samples = np.repeat(frame_voiced, HOP)

    def amp(h, freqs):
        # 1/h source slope keeps the fundamental prominent for pitch tracking
        return np.exp(_env_at(speaker, frame_ph, freqs)) / h

    out = additive_synth(f0_samples, voiced_samples, amp)
    out = _apply_run_fades(out, voiced_samples)
    out += _render_noise(speaker, frame_ph, noise_seed)

    peak = np.max(np.abs(out))
    if peak > 0:
        out *= _PEAK / peak

    centers = mel_center_freqs()
    env_frames = np.stack([combined_log_envelope(speaker, p, centers) for p in ph_ids])
    env_frames = np.repeat(env_frames, durations, axis=0)

    contour = PitchContour(f0_frames, frame_voiced.copy())
    return Utterance(utt_id, Waveform(out), list(phonemes), durations,
                     speaker.speaker_id, style.style_id if style_id is None else style_id,
                     contour, env_frames, speaker, style)


def _env_at(speaker: SpeakerSpec, frame_ph: np.ndarray, freqs_per_sample: np.ndarray) -> np.ndarray:
    """Log envelope at per-sample frequencies, smoothed across phoneme changes."""
    T = frame_ph.size
    # per-frame envelope value at this harmonic's per-frame frequency
    frame_centers = np.arange(T) * HOP + HOP // 2
    f_frames = freqs_per_sample[np.minimum(frame_centers, freqs_per_sample.size - 1)]
    vals = np.empty(T)
    for p in np.unique(frame_ph):
        sel = frame_ph == p
        vals[sel] = combined_log_envelope(speaker, int(p), f_frames[sel])
    if T >= 3:  # soften envelope steps at phoneme boundaries
        sm = vals.copy()
        sm[1:-1] = 0.25 * vals[:-2] + 0.5 * vals[1:-1] + 0.25 * vals[2:]
        vals = sm
    return np.interp(np.arange(freqs_per_sample.size), frame_centers, vals)


def _apply_run_fades(x: np.ndarray, voiced_samples: np.ndarray) -> np.ndarray:
    out = x.copy()
    edges = np.flatnonzero(np.diff(voiced_samples.astype(np.int8)))
    starts = [0] if voiced_samples[0] else []
    starts += [int(e) + 1 for e in edges if voiced_samples[e + 1]]
    ends = [int(e) + 1 for e in edges if voiced_samples[e]]
    if voiced_samples[-1]:
        ends.append(x.size)
    for s, e in zip(starts, ends):
        out[s:e] *= _edge_fade(e - s)
    return out


def _render_noise(speaker: SpeakerSpec, frame_ph: np.ndarray, noise_seed: int) -> np.ndarray:
    rng = np.random.default_rng(noise_seed)
    n = frame_ph.size * HOP
    out = np.zeros(n)
    T = frame_ph.size
    k = 0
    while k < T:
        p = frame_ph[k]
        j = k
        while j < T and frame_ph[j] == p:
            j += 1
        if p >= len(VOICED_PHONEMES):
            seg_n = (j - k) * HOP
            noise = rng.standard_normal(seg_n)
            spec = np.fft.rfft(noise)
            freqs = np.fft.rfftfreq(seg_n, 1.0 / SAMPLE_RATE)
            spec *= np.exp(combined_log_envelope(speaker, int(p), np.maximum(freqs, 1.0)))
            seg = np.fft.irfft(spec, seg_n)
            seg *= 0.10 / max(np.sqrt(np.mean(seg ** 2)), 1e-9)
            out[k * HOP:j * HOP] = seg * _edge_fade(seg_n, 80)
        k = j
    return out


def render_styleless(utt: Utterance) -> Waveform:
    """Exact oracle: re-render with pitch fixed to the median voiced f0."""
    if utt.speaker is None or utt.style is None:
        raise ValueError("utterance does not carry its generator specs")
    median = utt.contour.median_f0()
    seed = _noise_seed_of(utt.utt_id)
    out = render_utterance(utt.speaker, utt.style, utt.phonemes, seed,
                           utt.utt_id, utt.style_id, f0_const_hz=median)
    return out.wave


def _noise_seed_of(utt_id: str) -> int:
    import zlib
    return zlib.crc32(utt_id.encode()) & 0x7FFFFFFF


@dataclass
class ManifestEntry:
    utt_id: str
    wav_path: str
    phonemes: list[str]
    durations: np.ndarray
    speaker_id: int
    style_id: int

    def to_line(self) -> str:
        return "\t".join([
            self.utt_id, self.wav_path, " ".join(self.phonemes),
            ",".join(str(int(d)) for d in self.durations),
            str(self.speaker_id), str(self.style_id)])

    @classmethod
    def from_line(cls, line: str) -> "ManifestEntry":
        utt_id, wav_path, ph, dur, spk, sty = line.rstrip("\n").split("\t")
        return cls(utt_id, wav_path, ph.split(" "),
                   np.array([int(d) for d in dur.split(",")], dtype=np.int64),
                   int(spk), int(sty))


@dataclass
class Corpus:
    root: Path
    meta: dict
    train: list[ManifestEntry] = field(default_factory=list)
    eval: list[ManifestEntry] = field(default_factory=list)

    @property
    def speakers(self) -> list[SpeakerSpec]:
        return [SpeakerSpec.from_dict(d) for d in self.meta["speakers"]]

    @property
    def styles(self) -> list[StyleSpec]:
        return [StyleSpec.from_dict(d) for d in self.meta["styles"]]

    def load_utterance(self, entry: ManifestEntry) -> Utterance:
        wave = load_wav(self.root / entry.wav_path)
        contour = load_contour(self.root / "f0" / f"{entry.utt_id}.csv")
        env = load_mel(self.root / "env" / f"{entry.utt_id}.mel").frames
        spk = self.speakers[entry.speaker_id]
        sty = self.styles[entry.style_id]
        return Utterance(entry.utt_id, wave, entry.phonemes, entry.durations,
                         entry.speaker_id, entry.style_id, contour, env, spk, sty)

    def mel_of(self, entry: ManifestEntry) -> MelSpectrogram:
        return mel_spectrogram(load_wav(self.root / entry.wav_path))


def generate_corpus(n_speakers: int, n_styles: int, n_sentences: int, seed: int,
                    out_dir: str | Path) -> Corpus:
    """Render the full (speaker x style x sentence) grid to out_dir.

    The last speaker and the last style are held out: no evaluation
    (speaker, style) pair ever appears in training.
    """
    if n_speakers < 2:
        raise ValueError("need at least 2 speakers")
    if n_styles < 2:
        raise ValueError("need at least 2 styles")
    if n_sentences < 1:
        raise ValueError("need at least 1 sentence")

    root = Path(out_dir)
    for sub in ("wav", "f0", "env"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    ss = np.random.SeedSequence(seed)
    spk_rng, sty_rng, sen_rng = [np.random.default_rng(c) for c in ss.spawn(3)]
    speakers = [make_speaker(i, n_speakers, spk_rng) for i in range(n_speakers)]
    styles = [make_style(i, sty_rng) for i in range(n_styles)]
    sentences = [_sample_sentence(sen_rng) for _ in range(n_sentences)]

    held_speakers = [n_speakers - 1]
    held_styles = [n_styles - 1]

    train, evals = [], []
    for spk in speakers:
        for sty in styles:
            for k, sent in enumerate(sentences):
                utt_id = f"spk{spk.speaker_id:02d}_sty{sty.style_id:02d}_sen{k:03d}"
                utt = render_utterance(spk, sty, sent, _noise_seed_of(utt_id), utt_id)
                wav_rel = f"wav/{utt_id}.wav"
                save_wav(root / wav_rel, utt.wave)
                save_contour(root / "f0" / f"{utt_id}.csv", utt.contour)
                save_mel(root / "env" / f"{utt_id}.mel", MelSpectrogram(utt.envelope_frames))
                entry = ManifestEntry(utt_id, wav_rel, utt.phonemes, utt.durations,
                                      spk.speaker_id, sty.style_id)
                held = spk.speaker_id in held_speakers or sty.style_id in held_styles
                (evals if held else train).append(entry)

    meta = {
        "seed": seed,
        "n_speakers": n_speakers,
        "n_styles": n_styles,
        "n_sentences": n_sentences,
        "held_out_speakers": held_speakers,
        "held_out_styles": held_styles,
        "phoneme_inventory": PHONEME_INVENTORY,
        "speakers": [s.to_dict() for s in speakers],
        "styles": [s.to_dict() for s in styles],
    }
    (root / "corpus_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    _write_manifest(root / "train_manifest.txt", train)
    _write_manifest(root / "eval_manifest.txt", evals)
    return Corpus(root, meta, train, evals)


def _sample_sentence(rng: np.random.Generator) -> list[str]:
    length = int(rng.integers(8, 25))
    out = []
    for _ in range(length):
        if rng.random() < 0.78:
            out.append(VOICED_PHONEMES[int(rng.integers(len(VOICED_PHONEMES)))])
        else:
            out.append(FRICATIVE_PHONEMES[int(rng.integers(len(FRICATIVE_PHONEMES)))])
    return out


def _write_manifest(path: Path, entries: list[ManifestEntry]) -> None:
    path.write_text("".join(e.to_line() + "\n" for e in entries))


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    lines = Path(path).read_text().splitlines()
    return [ManifestEntry.from_line(ln) for ln in lines if ln.strip()]


def load_corpus(root: str | Path) -> Corpus:
    root = Path(root)
    meta = json.loads((root / "corpus_meta.json").read_text())
    train = load_manifest(root / "train_manifest.txt")
    evals = load_manifest(root / "eval_manifest.txt")
    return Corpus(root, meta, train, evals)
