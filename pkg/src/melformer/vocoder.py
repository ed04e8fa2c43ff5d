"""Mel-to-waveform bridge: 16 kHz-analysis mel in, 48 kHz waveform out.

The baseline is a deterministic signal-processing chain: pseudo-inverse
mel filterbank, Griffin-Lim phase recovery at 16 kHz, windowed-sinc 3x
upsampling. Any conforming vocoder can be registered by name; the length
law (exactly 600 output samples per mel frame at 48 kHz) is validated on
every call.
"""
from __future__ import annotations

import numpy as np
from scipy.signal import resample_poly

from .features.audio import Waveform
from .features.mel import (
    HOP_SAMPLES,
    MelSpectrogram,
    N_FFT,
    N_MELS,
    WIN_SAMPLES,
    _hann,
    mel_filterbank,
    stft_frames,
)

OUTPUT_RATE = 48000
SAMPLES_PER_FRAME = 600
GRIFFIN_LIM_ITERS = 60
PEAK_TARGET = 0.95


class VocoderContractError(RuntimeError):
    """A vocoder violated the 600-samples-per-frame 48 kHz contract."""


_PINV = None


def _mel_pseudo_inverse() -> np.ndarray:
    global _PINV
    if _PINV is None:
        _PINV = np.linalg.pinv(mel_filterbank())
    return _PINV


def mel_to_linear(log_mel: np.ndarray) -> np.ndarray:
    """Invert the mel projection by least squares, clamped at 0."""
    amp = np.exp(log_mel)
    linear = amp @ _mel_pseudo_inverse().T
    return np.clip(linear, 0.0, None)


def _stft_complex(samples: np.ndarray, n_frames: int) -> np.ndarray:
    frames = stft_frames(samples, n_frames) * _hann(WIN_SAMPLES)
    return np.fft.rfft(frames, n=N_FFT, axis=1)


def _istft(spec: np.ndarray) -> np.ndarray:
    """Windowed overlap-add inverse; returns exactly 200 * T samples."""
    n_frames = spec.shape[0]
    window = _hann(WIN_SAMPLES)
    frames = np.fft.irfft(spec, n=N_FFT, axis=1)[:, :WIN_SAMPLES] * window

    padded_len = HOP_SAMPLES * (n_frames - 1) + WIN_SAMPLES
    out = np.zeros(padded_len)
    wsum = np.zeros(padded_len)
    for t in range(n_frames):
        start = t * HOP_SAMPLES
        out[start:start + WIN_SAMPLES] += frames[t]
        wsum[start:start + WIN_SAMPLES] += window**2
    out = np.where(wsum > 1e-10, out / np.maximum(wsum, 1e-10), 0.0)

    half = WIN_SAMPLES // 2
    target = HOP_SAMPLES * n_frames
    trimmed = out[half:half + target]
    if len(trimmed) < target:
        trimmed = np.pad(trimmed, (0, target - len(trimmed)))
    return trimmed


def griffin_lim(magnitude: np.ndarray, iterations: int = GRIFFIN_LIM_ITERS) -> np.ndarray:
    """Phase recovery from an STFT magnitude (T, n_fft//2+1); deterministic."""
    n_frames = magnitude.shape[0]
    spec = magnitude.astype(np.complex128)
    for _ in range(iterations):
        estimate = _stft_complex(_istft(spec), n_frames)
        mag_est = np.abs(estimate)
        phase = np.where(mag_est > 1e-12, estimate / np.maximum(mag_est, 1e-12), 1.0)
        spec = magnitude * phase
    return _istft(spec)


def baseline_vocode(mel) -> Waveform:
    """Griffin-Lim plus sinc 3x upsampling; output is exactly 600 * T samples."""
    frames = mel.frames if isinstance(mel, MelSpectrogram) else np.asarray(mel, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != N_MELS:
        raise ValueError(f"expected (T, {N_MELS}) mel input, got {frames.shape}")
    if not np.all(np.isfinite(frames)):
        raise ValueError("mel input contains non-finite values")

    n_frames = frames.shape[0]
    magnitude = mel_to_linear(frames)
    audio_16k = griffin_lim(magnitude)
    audio_48k = resample_poly(audio_16k, up=3, down=1)

    target = SAMPLES_PER_FRAME * n_frames
    if len(audio_48k) >= target:
        audio_48k = audio_48k[:target]
    else:
        audio_48k = np.pad(audio_48k, (0, target - len(audio_48k)))

    # Normalize down to the 0.95 peak; quiet signals are left untouched
    # so silence stays silent.
    peak = np.abs(audio_48k).max()
    if peak > PEAK_TARGET:
        audio_48k = audio_48k * (PEAK_TARGET / peak)
    return Waveform(audio_48k, OUTPUT_RATE)


_REGISTRY = {}


def register_vocoder(name: str, fn) -> None:
    _REGISTRY[name] = fn


def available_vocoders() -> list:
    return sorted(_REGISTRY)


def vocode(mel, name: str = "baseline") -> Waveform:
    """Run a registered vocoder and enforce the output contract."""
    if name not in _REGISTRY:
        raise KeyError(f"no vocoder named {name!r}; known: {available_vocoders()}")
    n_frames = mel.num_frames if isinstance(mel, MelSpectrogram) else np.asarray(mel).shape[0]
    out = _REGISTRY[name](mel)
    expected = SAMPLES_PER_FRAME * n_frames
    if not isinstance(out, Waveform) or out.sample_rate != OUTPUT_RATE:
        rate = getattr(out, "sample_rate", None)
        raise VocoderContractError(
            f"vocoder {name!r} must return a {OUTPUT_RATE} Hz Waveform, got rate {rate}"
        )
    if len(out) != expected:
        raise VocoderContractError(
            f"vocoder {name!r} returned {len(out)} samples, expected "
            f"{expected} (600 x {n_frames} frames)"
        )
    return out


register_vocoder("baseline", baseline_vocode)
