"""Waveform handling and mel-spectrogram features.

All audio is mono 16 kHz. Mel frames use a 50 ms analysis window with a
12.5 ms shift (hop 200 samples) and 80 log-mel channels; an utterance of
n samples always yields exactly n // 200 frames.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000
HOP = 200
WIN_LENGTH = 800
N_FFT = 1024
N_MELS = 80
FMIN = 40.0
FMAX = 7800.0
FRAME_SHIFT_S = HOP / SAMPLE_RATE
FRAME_LENGTH_S = WIN_LENGTH / SAMPLE_RATE
LOG_FLOOR = float(np.log(1e-5))

MEL_MAGIC = b"USML"


class AudioError(ValueError):
    """Invalid audio input (empty, wrong rate, too short for analysis)."""


@dataclass
class Waveform:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError("waveform must be mono (1-D)")
        if self.sample_rate != SAMPLE_RATE:
            raise AudioError(f"sample rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise AudioError("waveform contains non-finite samples")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0 + 1e-9:
            raise AudioError("waveform samples exceed [-1, 1]")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate

    def n_frames(self) -> int:
        return self.samples.size // HOP


def load_wav(path: str | Path) -> Waveform:
    """Read a PCM16 mono 16 kHz WAV file."""
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise AudioError(f"{path}: expected mono audio")
    if data.dtype != np.int16:
        raise AudioError(f"{path}: expected PCM16, got {data.dtype}")
    return Waveform(data.astype(np.float64) / 32768.0, rate)


def save_wav(path: str | Path, wave: Waveform) -> None:
    """Write PCM16 mono 16 kHz; samples are clipped to [-1, 1]."""
    clipped = np.clip(wave.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype(np.int16)
    wavfile.write(str(path), wave.sample_rate, pcm)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT,
                   fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """Triangular mel filterbank (peak-1 triangles), shape (n_mels, n_fft//2+1)."""
    freqs = np.arange(n_fft // 2 + 1) * SAMPLE_RATE / n_fft
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((n_mels, freqs.size))
    for k in range(n_mels):
        lo, center, hi = hz_pts[k], hz_pts[k + 1], hz_pts[k + 2]
        up = (freqs - lo) / (center - lo)
        down = (hi - freqs) / (hi - center)
        fb[k] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mel_center_freqs(n_mels: int = N_MELS, fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """Center frequency (Hz) of each mel filter."""
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    return mel_to_hz(mel_pts)[1:-1]


_WINDOW = None
_FILTERBANK = None
_FB_PINV = None


def _window() -> np.ndarray:
    global _WINDOW
    if _WINDOW is None:
        n = np.arange(WIN_LENGTH)
        _WINDOW = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / WIN_LENGTH)  # periodic Hann
    return _WINDOW


def _filterbank() -> np.ndarray:
    global _FILTERBANK
    if _FILTERBANK is None:
        _FILTERBANK = mel_filterbank()
    return _FILTERBANK


def _fb_pinv() -> np.ndarray:
    global _FB_PINV
    if _FB_PINV is None:
        _FB_PINV = np.linalg.pinv(_filterbank())
    return _FB_PINV


def frame_signal(samples: np.ndarray, frame_len: int = N_FFT) -> np.ndarray:
    """Slice into hop-aligned frames of length frame_len, one per hop cell.

    Frame t is centered on sample t*HOP + HOP/2, so frame count is exactly
    len(samples) // HOP.
    """
    n = samples.size
    n_frames = n // HOP
    pad = frame_len // 2
    padded = np.concatenate([np.zeros(pad), samples, np.zeros(frame_len)])
    starts = np.arange(n_frames) * HOP + HOP // 2
    idx = starts[:, None] + np.arange(frame_len)[None, :]
    return padded[idx]


def stft_magnitude(wave: Waveform) -> np.ndarray:
    """Magnitude STFT, shape (T, N_FFT//2+1) with T = len(wave) // HOP."""
    if len(wave) < WIN_LENGTH:
        raise AudioError(f"waveform shorter than one analysis window ({WIN_LENGTH} samples)")
    frames = frame_signal(wave.samples, N_FFT)
    # window sits centered inside the (zero-padded) FFT frame
    off = (N_FFT - WIN_LENGTH) // 2
    windowed = np.zeros_like(frames)
    windowed[:, off:off + WIN_LENGTH] = frames[:, off:off + WIN_LENGTH] * _window()
    return np.abs(np.fft.rfft(windowed, axis=1))


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # (T, 80) log-mel
    frame_length_s: float = FRAME_LENGTH_S
    frame_shift_s: float = FRAME_SHIFT_S

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != N_MELS:
            raise AudioError(f"mel frames must be (T, {N_MELS})")
        if not np.all(np.isfinite(self.frames)):
            raise AudioError("mel contains non-finite entries")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def mel_spectrogram(wave: Waveform) -> MelSpectrogram:
    """T x 80 log-mel energies, floored at ln(1e-5). Deterministic."""
    mag = stft_magnitude(wave)
    mel = mag @ _filterbank().T
    return MelSpectrogram(np.log(np.maximum(mel, 1e-5)))


def _istft(spec: np.ndarray, n_samples: int) -> np.ndarray:
    """Weighted overlap-add inverse of the complex STFT produced frame-wise."""
    frames = np.fft.irfft(spec, n=N_FFT, axis=1)
    off = (N_FFT - WIN_LENGTH) // 2
    win = _window()
    pad = N_FFT // 2
    out = np.zeros(n_samples + pad + N_FFT)
    norm = np.zeros_like(out)
    starts = np.arange(frames.shape[0]) * HOP + HOP // 2 + off
    for t, s in enumerate(starts):
        out[s:s + WIN_LENGTH] += frames[t, off:off + WIN_LENGTH] * win
        norm[s:s + WIN_LENGTH] += win * win
    out = out[pad:pad + n_samples]
    norm = norm[pad:pad + n_samples]
    return out / np.maximum(norm, 1e-8)


def invert_mel(mel: MelSpectrogram, n_iter: int = 60) -> Waveform:
    """Reconstruct audio from a log-mel via iterative STFT phase estimation.

    The linear magnitude spectrum is recovered with the filterbank
    pseudo-inverse; phase starts at zero so the output is deterministic.
    """
    amp = np.exp(mel.frames)
    mag = np.maximum(amp @ _fb_pinv().T, 0.0)
    n_samples = mel.n_frames * HOP
    spec = mag.astype(np.complex128)
    for _ in range(n_iter):
        wav = _istft(spec, n_samples)
        re = np.fft.rfft(_apply_window(frame_signal(wav, N_FFT)), axis=1)
        phase = re / np.maximum(np.abs(re), 1e-12)
        spec = mag * phase
    wav = _istft(spec, n_samples)
    peak = np.max(np.abs(wav)) if wav.size else 0.0
    if peak > 1.0:
        wav = wav / peak
    return Waveform(wav)


def _apply_window(frames: np.ndarray) -> np.ndarray:
    off = (N_FFT - WIN_LENGTH) // 2
    out = np.zeros_like(frames)
    out[:, off:off + WIN_LENGTH] = frames[:, off:off + WIN_LENGTH] * _window()
    return out


def save_mel(path: str | Path, mel: MelSpectrogram) -> None:
    """Binary mel file: magic "USML", uint32 T, uint32 80, float32 row-major LE."""
    t, c = mel.frames.shape
    with open(path, "wb") as f:
        f.write(MEL_MAGIC)
        f.write(struct.pack("<II", t, c))
        f.write(mel.frames.astype("<f4").tobytes())


def load_mel(path: str | Path) -> MelSpectrogram:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MEL_MAGIC:
            raise AudioError(f"{path}: bad mel magic {magic!r}")
        t, c = struct.unpack("<II", f.read(8))
        if c != N_MELS:
            raise AudioError(f"{path}: expected {N_MELS} channels, got {c}")
        data = np.frombuffer(f.read(t * c * 4), dtype="<f4")
        if data.size != t * c:
            raise AudioError(f"{path}: truncated mel file")
    return MelSpectrogram(data.reshape(t, c).astype(np.float64))
