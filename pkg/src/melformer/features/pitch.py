"""F0 extraction and phoneme-level pitch targets.

The estimator is a normalized autocorrelation tracker over the same
frames as the mel extractor, so contour length always equals the mel
frame count. Search band 40-800 Hz, voicing threshold 0.3.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import SampleRateError, Waveform
from .mel import HOP_SAMPLES, SAMPLE_RATE, WIN_SAMPLES, frame_count, stft_frames

F0_MIN = 40.0
F0_MAX = 800.0
VOICING_THRESHOLD = 0.3
ENERGY_FLOOR = 1e-8


@dataclass
class PitchContour:
    """Per-frame F0 in Hz, 0 where unvoiced."""

    f0: np.ndarray
    voiced: np.ndarray

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.f0.shape != self.voiced.shape or self.f0.ndim != 1:
            raise ValueError("f0 and voiced mask must be 1-D and the same length")
        if np.any((self.f0 == 0) == self.voiced):
            raise ValueError("f0 must be 0 exactly on unvoiced frames")

    def __len__(self) -> int:
        return len(self.f0)


def _normalized_autocorr(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """NCC r(tau) = sum x[t] x[t+tau] / sqrt(e_head(tau) e_tail(tau)) per frame."""
    n, w = frames.shape
    # Full autocorrelation via FFT.
    size = 1
    while size < 2 * w:
        size *= 2
    spec = np.fft.rfft(frames, n=size, axis=1)
    acf = np.fft.irfft(spec * np.conj(spec), axis=1)[:, : max_lag + 1].real

    sq = frames**2
    csum = np.concatenate([np.zeros((n, 1)), np.cumsum(sq, axis=1)], axis=1)
    total = csum[:, -1:]
    lags = np.arange(max_lag + 1)
    # energies of x[0 : w-tau] and x[tau : w]
    e_head = csum[:, w - lags]
    e_tail = total - csum[:, lags]
    denom = np.sqrt(np.maximum(e_head * e_tail, ENERGY_FLOOR**2))
    return acf / denom


def _search_start(ncc_row: np.ndarray, min_lag: int, max_lag: int) -> int:
    """First lag past the autocorrelation main lobe, at least min_lag.

    The normalized autocorrelation stays near 1 for small lags on any
    smooth signal; candidate periods only start once it has dipped below
    zero.
    """
    negative = np.nonzero(ncc_row[1:max_lag + 1] < 0.0)[0]
    lobe_end = int(negative[0]) + 1 if len(negative) else 1
    return max(min_lag, lobe_end)


def _first_strong_peak(ncc_row: np.ndarray, start: int, max_lag: int,
                       peak_value: float) -> int:
    """Smallest-lag local maximum within 15% of the band peak.

    Periodic signals correlate at every multiple of the true period;
    taking the first strong peak avoids octave-down errors.
    """
    floor = max(VOICING_THRESHOLD, 0.85 * peak_value)
    for lag in range(start, max_lag + 1):
        v = ncc_row[lag]
        if v >= floor and v >= ncc_row[lag - 1] and v >= ncc_row[min(lag + 1, max_lag)]:
            return lag
    return int(np.argmax(ncc_row[start:max_lag + 1])) + start


def extract_pitch(wav: Waveform) -> PitchContour:
    """One F0 estimate per mel frame; degenerate audio yields all-unvoiced."""
    if wav.sample_rate != SAMPLE_RATE:
        raise SampleRateError(f"extract_pitch expects 16000 Hz input, got {wav.sample_rate}")
    n_frames = frame_count(len(wav))
    # Zero padding at the edges: reflect padding makes edge frames
    # even-symmetric, which fakes a period of half the window.
    frames = stft_frames(wav.samples, n_frames, pad_mode="constant")
    frames = frames - frames.mean(axis=1, keepdims=True)

    min_lag = int(SAMPLE_RATE / F0_MAX)
    max_lag = min(int(np.ceil(SAMPLE_RATE / F0_MIN)), WIN_SAMPLES - 1)
    ncc = _normalized_autocorr(frames, max_lag)

    energy = (frames**2).sum(axis=1)
    f0 = np.zeros(n_frames)
    voiced = np.zeros(n_frames, dtype=bool)
    for t in range(n_frames):
        if energy[t] <= ENERGY_FLOOR:
            continue
        start = _search_start(ncc[t], min_lag, max_lag)
        peak = ncc[t, start : max_lag + 1].max()
        if peak <= VOICING_THRESHOLD:
            continue
        voiced[t] = True
        lag = _first_strong_peak(ncc[t], start, max_lag, peak)
        # Parabolic refinement for sub-sample lag resolution.
        if 0 < lag < max_lag:
            a, b, c = ncc[t, lag - 1], ncc[t, lag], ncc[t, lag + 1]
            denom = a - 2 * b + c
            if abs(denom) > 1e-12:
                lag = lag + 0.5 * (a - c) / denom
        f0[t] = np.clip(SAMPLE_RATE / lag, F0_MIN, F0_MAX)

    return PitchContour(f0, voiced)


def interpolate_unvoiced(contour: PitchContour) -> np.ndarray:
    """Hz contour with unvoiced gaps filled linearly; edges held.

    An all-unvoiced contour has nothing to interpolate from and returns
    None; callers decide the fallback.
    """
    voiced_idx = np.nonzero(contour.voiced)[0]
    if len(voiced_idx) == 0:
        return None
    return np.interp(np.arange(len(contour)), voiced_idx, contour.f0[voiced_idx])


def phoneme_log_pitch(contour: PitchContour, durations):
    """Raw per-phoneme log-Hz pitch, or None when all frames are unvoiced.

    Unvoiced gaps are interpolated in Hz before the log; each phoneme
    takes the mean log-Hz over its frame span. A zero-duration phoneme
    takes the value at its boundary: the midpoint of the adjacent frames'
    values, held at the contour edges.
    """
    durations = np.asarray(durations, dtype=np.int64)
    if np.any(durations < 0):
        raise ValueError("durations must be non-negative")
    total = int(durations.sum())
    if total != len(contour):
        raise ValueError(
            f"durations sum to {total} but pitch contour has {len(contour)} frames"
        )

    filled = interpolate_unvoiced(contour)
    if filled is None:
        return None

    log_f0 = np.log(filled)
    t_max = len(contour) - 1
    out = np.empty(len(durations))
    start = 0
    for i, d in enumerate(durations):
        if d > 0:
            out[i] = log_f0[start:start + d].mean()
        else:
            lo = min(max(start - 1, 0), t_max)
            hi = min(start, t_max)
            out[i] = 0.5 * (log_f0[lo] + log_f0[hi])
        start += d
    return out


def phoneme_pitch_targets(contour: PitchContour, durations,
                          mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """Per-phoneme pitch standardized as (log-Hz - mean) / std.

    An all-unvoiced contour falls back to the corpus mean, i.e. 0 after
    standardization.
    """
    if std <= 0:
        raise ValueError("std must be positive")
    raw = phoneme_log_pitch(contour, durations)
    if raw is None:
        return np.zeros(len(np.asarray(durations)))
    return (raw - mean) / std
