"""Styleless-waveform construction.

The perturbation chain flattens the pitch trajectory of an utterance while
keeping its spectral envelope and timing: the extracted contour is shifted
by a random global ratio, monotonized to its median, and the waveform is
resynthesized with time-domain pitch-synchronous overlap-add.
"""

from __future__ import annotations

import numpy as np

from .audio import HOP, SAMPLE_RATE, MelSpectrogram, Waveform, mel_spectrogram
from .pitch import (PitchContour, extract_pitch, pitch_monotonize,
                    pitch_randomize, sample_ratio)

_UNVOICED_RATE = 100.0  # dummy mark rate (Hz) where no pitch is defined


def _per_sample_rate(contour: PitchContour, n_samples: int) -> np.ndarray:
    """Mark rate per sample: interpolated f0 on voiced spans, dummy elsewhere."""
    centers = np.arange(len(contour)) * HOP + HOP // 2
    sample_idx = np.arange(n_samples)
    frame_of = np.clip(sample_idx // HOP, 0, len(contour) - 1)
    voiced_mask = contour.voiced[frame_of]
    rate = np.full(n_samples, _UNVOICED_RATE)
    if contour.voiced.any():
        v_centers = centers[contour.voiced]
        v_f0 = contour.f0_hz[contour.voiced]
        rate[voiced_mask] = np.interp(sample_idx[voiced_mask], v_centers, v_f0)
    return rate


def _place_marks(rate: np.ndarray, voiced_sample: np.ndarray) -> np.ndarray:
    """Integrate mark positions region by region.

    Each contiguous voiced (or unvoiced) span starts with its own mark, so
    stale spacing never leaks across a voicing boundary.
    """
    n = rate.size
    edges = np.flatnonzero(np.diff(voiced_sample.astype(np.int8))) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [n]])
    marks = []
    for lo, hi in zip(starts, ends):
        pos = float(lo)
        while pos < hi:
            marks.append(pos)
            pos += SAMPLE_RATE / rate[min(int(pos), n - 1)]
    return np.asarray(marks)


def _align_marks(marks: np.ndarray, samples: np.ndarray, rate: np.ndarray,
                 voiced_sample: np.ndarray) -> np.ndarray:
    """Phase-lock voiced analysis marks, one consistent point per period.

    Each mark is placed by cross-correlating the waveform around the
    previous mark with a window around the predicted position (previous
    mark plus one period); a quadratic penalty keeps the correction small.
    Inconsistent per-grain phase would reappear in the output as
    subharmonic artifacts.
    """
    n = samples.size
    kernel = np.ones(13) / 13.0
    smooth = np.convolve(samples, kernel, mode="same")
    out = marks.copy()
    prev = None
    for k, m in enumerate(marks):
        i = min(int(m), n - 1)
        if not voiced_sample[i]:
            out[k] = m
            prev = None
            continue
        period = SAMPLE_RATE / rate[i]
        if prev is None:
            # anchor the region on its first clear pulse
            lo = max(0, i)
            hi = min(n, i + int(1.2 * period))
            out[k] = lo + int(np.argmax(smooth[lo:hi])) if hi - lo >= 3 else m
            prev = out[k]
            continue
        center = prev + period
        q = max(4, int(0.4 * period))
        r = max(2, int(0.25 * period))
        tlo, thi = int(prev) - q, int(prev) + q + 1
        slo, shi = int(center) - q - r, int(center) + q + r + 1
        if tlo < 0 or thi > n or slo < 0 or shi > n:
            out[k] = min(max(int(round(center)), 0), n - 1)
            prev = out[k]
            continue
        template = samples[tlo:thi]
        corr = np.correlate(samples[slo:shi], template, mode="valid")
        offsets = np.arange(corr.size) - r
        corr = corr - 0.3 * np.max(np.abs(corr)) * (offsets / max(r, 1)) ** 2
        out[k] = slo + q + int(np.argmax(corr))
        prev = out[k]
    return np.maximum.accumulate(out)


def psola_resynthesize(wave: Waveform, src: PitchContour, dst: PitchContour) -> Waveform:
    """Overlap-add resynthesis imposing dst's pitch on wave.

    Output length equals input length; the spectral envelope is carried by
    the copied waveform periods.
    """
    x = wave.samples
    n = x.size
    frame_of = np.clip(np.arange(n) // HOP, 0, len(src) - 1)
    voiced_sample = src.voiced[frame_of]

    rate_src = _per_sample_rate(src, n)
    rate_dst = _per_sample_rate(dst, n)
    ana = _place_marks(rate_src, voiced_sample)
    ana = _align_marks(ana, x, rate_src, voiced_sample)
    syn = _place_marks(rate_dst, voiced_sample)

    out = np.zeros(n)
    norm = np.zeros(n)
    ana_int = ana.astype(int)
    ana_voiced = voiced_sample[np.clip(ana_int, 0, n - 1)]
    ana_by_tag = {True: ana[ana_voiced], False: ana[~ana_voiced]}
    for s in syn:
        # map to the nearest analysis mark of the same voicing class so
        # noise grains never land inside voiced runs (and vice versa)
        tag = bool(voiced_sample[min(int(s), n - 1)])
        pool = ana_by_tag[tag] if ana_by_tag[tag].size else ana
        k = int(np.searchsorted(pool, s))
        if k > 0 and (k == pool.size or abs(pool[k - 1] - s) <= abs(pool[k] - s)):
            k -= 1
        a = int(pool[min(k, pool.size - 1)])
        # one analysis period each side: a grain holds a single excitation pulse
        half = int(round(SAMPLE_RATE / rate_src[min(a, n - 1)]))
        grain_lo = a - half
        grain_hi = a + half + 1
        win = np.hanning(2 * half + 1)
        gl = max(grain_lo, 0)
        gh = min(grain_hi, n)
        wl = gl - grain_lo
        grain = x[gl:gh] * win[wl:wl + (gh - gl)]
        if grain.size < 2:
            continue
        # sub-sample placement: pulse lands exactly at s, not at round(s)
        base = int(np.floor(s))
        frac = s - base
        g_shift = np.empty(grain.size + 1)
        g_shift[0] = (1.0 - frac) * grain[0]
        g_shift[1:-1] = (1.0 - frac) * grain[1:] + frac * grain[:-1]
        g_shift[-1] = frac * grain[-1]
        w_full = np.zeros(grain.size)
        w_full[:] = win[wl:wl + grain.size]
        w_shift = np.empty(grain.size + 1)
        w_shift[0] = (1.0 - frac) * w_full[0]
        w_shift[1:-1] = (1.0 - frac) * w_full[1:] + frac * w_full[:-1]
        w_shift[-1] = frac * w_full[-1]
        dest_lo = base - half + wl
        dest_hi = dest_lo + g_shift.size
        dl = max(dest_lo, 0)
        dh = min(dest_hi, n)
        if dh <= dl:
            continue
        out[dl:dh] += g_shift[dl - dest_lo:dh - dest_lo]
        norm[dl:dh] += w_shift[dl - dest_lo:dh - dest_lo]
    out /= np.maximum(norm, 1e-3)
    peak = np.max(np.abs(out)) if out.size else 0.0
    if peak > 1.0:
        out /= peak * 1.0001
    return Waveform(out)


def perturb_utterance(wave: Waveform, rng: np.random.Generator | None = None,
                      ratio: float | None = None) -> tuple[Waveform, MelSpectrogram]:
    """Randomize then monotonize the pitch contour and resynthesize.

    Returns the styleless waveform and its mel. Pass rng (or an explicit
    ratio) for a deterministic result.
    """
    contour = extract_pitch(wave)
    if ratio is None:
        ratio = sample_ratio(rng if rng is not None else np.random.default_rng())
    target = pitch_monotonize(pitch_randomize(contour, ratio))
    styleless = psola_resynthesize(wave, contour, target)
    return styleless, mel_spectrogram(styleless)
