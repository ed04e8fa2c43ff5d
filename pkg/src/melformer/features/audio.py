"""Waveform container, resampling, and WAV file I/O."""
from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np
from scipy.signal import resample_poly

SUPPORTED_RATES = (16000, 48000)


class SampleRateError(ValueError):
    """Raised when a waveform's sample rate does not match the contract."""


@dataclass
class Waveform:
    """Mono audio: float samples in [-1, 1] at 16 kHz or 48 kHz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"expected mono 1-D samples, got shape {self.samples.shape}")
        if self.sample_rate not in SUPPORTED_RATES:
            raise SampleRateError(
                f"sample rate {self.sample_rate} not in {SUPPORTED_RATES}"
            )
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)


def resample_48k_to_16k(wav: Waveform) -> Waveform:
    """Downsample 48 kHz audio to 16 kHz with an anti-aliased polyphase filter.

    Output length is ceil(len/3); content above 8 kHz is attenuated by the
    decimation filter.
    """
    if wav.sample_rate != 48000:
        raise SampleRateError(
            f"resample_48k_to_16k expects 48000 Hz input, got {wav.sample_rate}"
        )
    out = resample_poly(wav.samples, up=1, down=3)
    return Waveform(np.clip(out, -1.0, 1.0), 16000)


def read_wav(path) -> Waveform:
    """Read a mono 16-bit PCM RIFF/WAVE file."""
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * f.getsampwidth()}-bit")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, wav: Waveform) -> None:
    """Write a mono 16-bit PCM RIFF/WAVE file."""
    pcm = np.clip(np.round(wav.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(wav.sample_rate)
        f.writeframes(pcm.tobytes())
