"""Log-mel spectrogram extraction at the 16 kHz analysis rate.

Framing contract: Hann window of 800 samples (50 ms), hop 200 samples
(12.5 ms), reflect center padding, so T = floor(len/200) + 1 frames.
This frame count is the single source of truth for all duration
bookkeeping downstream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import SampleRateError, Waveform

SAMPLE_RATE = 16000
WIN_SAMPLES = 800
HOP_SAMPLES = 200
N_FFT = 800
N_MELS = 80
FMIN = 0.0
FMAX = 8000.0
LOG_FLOOR = 1e-5


@dataclass
class MelSpectrogram:
    """Frame-major (T, 80) natural-log mel magnitudes."""

    frames: np.ndarray
    hop_samples: int = HOP_SAMPLES
    win_samples: int = WIN_SAMPLES

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != N_MELS:
            raise ValueError(f"expected (T, {N_MELS}) mel frames, got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ValueError("mel spectrogram must have at least one frame")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("mel spectrogram contains non-finite entries")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def frame_count(n_samples: int) -> int:
    """Number of mel frames produced for a waveform of n_samples at 16 kHz."""
    if n_samples < 1:
        raise ValueError("waveform must contain at least one sample")
    return n_samples // HOP_SAMPLES + 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT,
                   sample_rate: int = SAMPLE_RATE,
                   fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """Triangular mel filterbank, peak height 1, shape (n_mels, n_fft//2 + 1)."""
    n_bins = n_fft // 2 + 1
    freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    mel_points = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_points = mel_to_hz(mel_points)

    fb = np.zeros((n_mels, n_bins))
    for k in range(n_mels):
        lo, center, hi = hz_points[k], hz_points[k + 1], hz_points[k + 2]
        up = (freqs - lo) / (center - lo)
        down = (hi - freqs) / (hi - center)
        fb[k] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def mel_center_frequencies(n_mels: int = N_MELS,
                           fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """Center frequency in Hz of each mel channel."""
    mel_points = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    return mel_to_hz(mel_points)[1:-1]


def _hann(n: int) -> np.ndarray:
    # Periodic Hann, matching standard STFT analysis windows.
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_frames(samples: np.ndarray, n_frames: int, pad_mode: str = "reflect") -> np.ndarray:
    """Center-padded frames of WIN_SAMPLES at HOP_SAMPLES intervals.

    Frame t is centered on sample t * HOP_SAMPLES of the unpadded signal.
    Signals shorter than the pad width fall back to zero padding (numpy
    reflect needs at least 2 samples).
    """
    half = WIN_SAMPLES // 2
    if pad_mode == "reflect" and len(samples) < 2:
        pad_mode = "constant"
    padded = np.pad(samples, half, mode=pad_mode)
    frames = np.empty((n_frames, WIN_SAMPLES))
    for t in range(n_frames):
        start = t * HOP_SAMPLES
        frames[t] = padded[start:start + WIN_SAMPLES]
    return frames


def stft_magnitude(samples: np.ndarray, n_frames: int) -> np.ndarray:
    """Hann-windowed STFT magnitude, shape (n_frames, N_FFT//2 + 1)."""
    frames = stft_frames(samples, n_frames) * _hann(WIN_SAMPLES)
    return np.abs(np.fft.rfft(frames, n=N_FFT, axis=1))


_FILTERBANK = None


def _filterbank() -> np.ndarray:
    global _FILTERBANK
    if _FILTERBANK is None:
        _FILTERBANK = mel_filterbank()
    return _FILTERBANK


def compute_mel(wav: Waveform) -> MelSpectrogram:
    """Log-mel spectrogram of a 16 kHz waveform.

    80 mel channels spanning 0-8000 Hz, natural log with magnitude floor
    1e-5; T = floor(len/200) + 1.
    """
    if wav.sample_rate != SAMPLE_RATE:
        raise SampleRateError(f"compute_mel expects 16000 Hz input, got {wav.sample_rate}")
    if len(wav) < 1:
        raise ValueError("cannot compute mel of an empty waveform")
    n_frames = frame_count(len(wav))
    mag = stft_magnitude(wav.samples, n_frames)
    mel = mag @ _filterbank().T
    return MelSpectrogram(np.log(np.maximum(mel, LOG_FLOOR)))
