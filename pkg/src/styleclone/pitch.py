"""Pitch contour extraction and the perturbation primitives.

Extraction is an autocorrelation (YIN-style) tracker: cumulative
mean-normalized difference function per 12.5 ms frame, voicing decided by
an aperiodicity threshold of 0.35, search range 50-600 Hz.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import FRAME_SHIFT_S, HOP, SAMPLE_RATE, AudioError, Waveform

F0_MIN = 50.0
F0_MAX = 600.0
APERIODICITY_THRESHOLD = 0.35

_YIN_WINDOW = 512                       # integration window (samples)
_TAU_MIN = int(SAMPLE_RATE / F0_MAX)    # 26
_TAU_MAX = int(np.ceil(SAMPLE_RATE / F0_MIN))  # 320
_SEG = _YIN_WINDOW + _TAU_MAX


class NoVoicedFramesError(ValueError):
    """Operation requires at least one voiced frame."""


@dataclass
class PitchContour:
    f0_hz: np.ndarray      # per-frame f0, 0 where unvoiced
    voiced: np.ndarray     # per-frame bool
    frame_shift_s: float = FRAME_SHIFT_S

    def __post_init__(self):
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.f0_hz.shape != self.voiced.shape:
            raise ValueError("f0 and voiced masks must have equal length")
        if np.any((self.f0_hz > 0) != self.voiced):
            raise ValueError("f0 > 0 must coincide with the voiced mask")

    def __len__(self) -> int:
        return self.f0_hz.size

    @property
    def times_s(self) -> np.ndarray:
        return np.arange(len(self)) * self.frame_shift_s

    def voiced_f0(self) -> np.ndarray:
        return self.f0_hz[self.voiced]

    def median_f0(self) -> float:
        v = self.voiced_f0()
        if v.size == 0:
            raise NoVoicedFramesError("contour has no voiced frames")
        return float(np.median(v))


def voiced_std_cents(contour: PitchContour) -> float:
    """Standard deviation of voiced f0 in cents around its own mean."""
    v = contour.voiced_f0()
    if v.size == 0:
        raise NoVoicedFramesError("contour has no voiced frames")
    cents = 1200.0 * np.log2(v)
    return float(np.std(cents))


def _difference_function(segments: np.ndarray) -> np.ndarray:
    """YIN difference d(tau) for each row, tau in [0, _TAU_MAX]; FFT-based."""
    w = _YIN_WINDOW
    n_fft = 1 << int(np.ceil(np.log2(_SEG + w)))
    x = segments
    # cross term r(tau) = sum_{j<w} x[j] x[j+tau] via correlation
    fx = np.fft.rfft(x, n_fft, axis=1)
    fw = np.fft.rfft(x[:, :w][:, ::-1], n_fft, axis=1)
    corr = np.fft.irfft(fx * fw, n_fft, axis=1)[:, w - 1:w + _TAU_MAX]
    sq = x * x
    cum = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(sq, axis=1)], axis=1)
    energy0 = cum[:, w] - cum[:, 0]
    taus = np.arange(_TAU_MAX + 1)
    energy_tau = cum[:, taus + w] - cum[:, taus]
    return energy0[:, None] + energy_tau - 2.0 * corr


def _cmnd(diff: np.ndarray) -> np.ndarray:
    """Cumulative mean-normalized difference; d'(0) = 1 by convention."""
    taus = np.arange(1, diff.shape[1])
    running = np.cumsum(diff[:, 1:], axis=1)
    out = np.ones_like(diff)
    out[:, 1:] = diff[:, 1:] * taus[None, :] / np.maximum(running, 1e-12)
    return out


def extract_pitch(wave: Waveform) -> PitchContour:
    """Per-frame fundamental frequency with one entry per 12.5 ms frame."""
    if len(wave) < _SEG:
        raise AudioError(
            f"waveform too short for pitch analysis (need {_SEG} samples, got {len(wave)})")
    n_frames = wave.n_frames()
    pad = _SEG // 2
    padded = np.concatenate([np.zeros(pad), wave.samples, np.zeros(_SEG)])
    starts = np.arange(n_frames) * HOP + HOP // 2
    segments = padded[starts[:, None] + np.arange(_SEG)[None, :]]

    d = _cmnd(_difference_function(segments))
    rms = np.sqrt(np.mean(segments[:, :_YIN_WINDOW] ** 2, axis=1))

    def run_pass(median_hint: float | None) -> tuple[np.ndarray, np.ndarray]:
        f0 = np.zeros(n_frames)
        voiced = np.zeros(n_frames, dtype=bool)
        for t in range(n_frames):
            if rms[t] < 1e-4:
                continue
            tau = _pick_tau(d[t], median_hint)
            if tau is None:
                continue
            cand = SAMPLE_RATE / _parabolic_refine(d[t], tau)
            if F0_MIN <= cand <= F0_MAX:
                f0[t] = cand
                voiced[t] = True
        return f0, voiced

    # second pass resolves octave-ambiguous frames against the utterance
    # median (near-equal dips at the period and its half are common in
    # windows that straddle voicing boundaries)
    f0, voiced = run_pass(None)
    if voiced.any():
        f0, voiced = run_pass(float(np.median(f0[voiced])))
    f0, voiced = _smooth_trajectory(f0, voiced)
    return PitchContour(f0, voiced)


def _smooth_trajectory(f0: np.ndarray, voiced: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Median smoothing and outlier rejection within each voiced run.

    Frames whose analysis window straddles a voiced/unvoiced boundary can
    produce junk estimates just under the aperiodicity threshold. Each run
    gets a 3-point median; frames further than 0.21 octave from their
    7-frame local median, or 0.7 octave from the run median, are marked
    unvoiced, as are runs shorter than 3 frames.
    """
    f0 = f0.copy()
    voiced = voiced.copy()
    n = f0.size
    t = 0
    while t < n:
        if not voiced[t]:
            t += 1
            continue
        lo = t
        while t < n and voiced[t]:
            t += 1
        hi = t
        run = f0[lo:hi]
        if run.size < 3:  # isolated voicing blips are unreliable
            f0[lo:hi] = 0.0
            voiced[lo:hi] = False
            continue
        sm = np.empty_like(run)
        for i in range(run.size):
            a = min(max(0, i - 1), run.size - 3)
            sm[i] = np.median(run[a:a + 3])
        med = np.median(sm)
        keep = np.abs(np.log2(sm / med)) <= 0.7
        for i in range(run.size):
            local = np.median(sm[max(0, i - 3):min(run.size, i + 4)])
            if abs(np.log2(sm[i] / local)) > 0.21:
                keep[i] = False
        f0[lo:hi] = np.where(keep, sm, 0.0)
        voiced[lo:hi] = keep
    return f0, voiced


def _pick_tau(row: np.ndarray, median_hint: float | None = None) -> int | None:
    """Period lag from the CMND dips.

    Voiced iff the deepest dip undercuts the aperiodicity threshold. Among
    dips whose depth is close to the deepest one (multiples of the true
    period dip equally low; dips from a dominant harmonic or comb
    sidelobes stay measurably shallower), take the smallest lag, or the
    lag nearest the utterance median when a hint is available.
    """
    seg = row[_TAU_MIN:_TAU_MAX]
    local_min = (seg[1:-1] <= seg[:-2]) & (seg[1:-1] <= seg[2:])
    dips = np.flatnonzero(local_min) + _TAU_MIN + 1
    if dips.size == 0:
        return None
    # interpolated depths: a non-integer period reads shallow at integer
    # lags while its doubled lag may hit the grid, inverting raw depths
    depth = np.array([_interp_depth(row, int(t)) for t in dips])
    best = float(depth.min())
    if best >= APERIODICITY_THRESHOLD:
        return None
    cand = dips[depth <= 1.5 * best + 0.005]
    if median_hint is None or median_hint <= 0:
        return int(cand.min())
    off = np.abs(np.log2((SAMPLE_RATE / cand) / median_hint))
    return int(cand[np.argmin(off)])


def _interp_depth(row: np.ndarray, tau: int) -> float:
    if tau <= 0 or tau >= row.size - 1:
        return float(row[tau])
    a, b, c = row[tau - 1], row[tau], row[tau + 1]
    denom = a - 2.0 * b + c
    if denom <= 1e-12:
        return float(b)
    shift = 0.5 * (a - c) / denom
    val = b - 0.25 * (a - c) * np.clip(shift, -1.0, 1.0)
    return float(max(val, 0.0))


def _parabolic_refine(row: np.ndarray, tau: int) -> float:
    if tau <= 0 or tau >= row.size - 1:
        return float(tau)
    a, b, c = row[tau - 1], row[tau], row[tau + 1]
    denom = a - 2.0 * b + c
    if abs(denom) < 1e-12:
        return float(tau)
    shift = 0.5 * (a - c) / denom
    return float(tau + np.clip(shift, -1.0, 1.0))


def pitch_randomize(contour: PitchContour, ratio: float) -> PitchContour:
    """Multiply voiced f0 by a fixed ratio; unvoiced frames untouched."""
    if not np.isfinite(ratio) or ratio <= 0:
        raise ValueError(f"ratio must be positive, got {ratio}")
    f0 = contour.f0_hz.copy()
    f0[contour.voiced] *= ratio
    return PitchContour(f0, contour.voiced.copy(), contour.frame_shift_s)


def sample_ratio(rng: np.random.Generator) -> float:
    """Per-utterance shift ratio, log2-uniform over +-4 semitones."""
    return float(2.0 ** rng.uniform(-4.0 / 12.0, 4.0 / 12.0))


def pitch_monotonize(contour: PitchContour) -> PitchContour:
    """Flatten every voiced frame to the utterance's median voiced f0."""
    median = contour.median_f0()
    f0 = np.where(contour.voiced, median, 0.0)
    return PitchContour(f0, contour.voiced.copy(), contour.frame_shift_s)


def save_contour(path: str | Path, contour: PitchContour) -> None:
    """CSV: frame_index,time_s,f0_hz,voiced."""
    with open(path, "w") as f:
        f.write("frame_index,time_s,f0_hz,voiced\n")
        for i, (f0, v) in enumerate(zip(contour.f0_hz, contour.voiced)):
            f.write(f"{i},{i * contour.frame_shift_s:.6f},{f0:.6f},{int(v)}\n")


def load_contour(path: str | Path) -> PitchContour:
    rows = np.genfromtxt(str(path), delimiter=",", skip_header=1, ndmin=2)
    if rows.size == 0:
        return PitchContour(np.zeros(0), np.zeros(0, dtype=bool))
    return PitchContour(rows[:, 2], rows[:, 3] > 0.5)
