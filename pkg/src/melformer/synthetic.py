"""Deterministic synthetic corpus for desk-scale training and tests.

Every phoneme id maps to a fixed 48 kHz segment (a tone, or band-limited
noise for some ids) of a fixed frame length, so duration targets are
exact by construction. The last hop of each utterance is trimmed so the
frame count of the 16 kHz mel equals the duration sum exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features.audio import Waveform, write_wav
from .features.mel import HOP_SAMPLES

RATE_48K = 48000
SAMPLES_PER_FRAME_48K = 3 * HOP_SAMPLES  # 600


@dataclass
class SyntheticCorpusSpec:
    num_utterances: int = 8
    vocab_size: int = 16
    num_speakers: int = 2
    num_languages: int = 2
    min_phonemes: int = 6
    max_phonemes: int = 10
    seed: int = 0


def phoneme_frames(phoneme_id: int) -> int:
    """Fixed duration in mel frames for a phoneme id."""
    return 3 + phoneme_id % 4


def phoneme_tone_hz(phoneme_id: int) -> float:
    return 220.0 * 2.0 ** (phoneme_id / 12.0)


def is_noise_phoneme(phoneme_id: int) -> bool:
    return phoneme_id % 5 == 2


def render_phoneme(phoneme_id: int, seed: int) -> np.ndarray:
    """The fixed 48 kHz segment for one phoneme id, amplitude ~0.5."""
    n = phoneme_frames(phoneme_id) * SAMPLES_PER_FRAME_48K
    if is_noise_phoneme(phoneme_id):
        rng = np.random.default_rng((seed + 1) * 1_000_003 + phoneme_id)
        segment = 0.15 * rng.standard_normal(n)
    else:
        t = np.arange(n) / RATE_48K
        segment = 0.5 * np.sin(2 * np.pi * phoneme_tone_hz(phoneme_id) * t)
    # Short fades avoid clicks at segment joins.
    fade = min(120, n // 4)
    ramp = np.linspace(0.0, 1.0, fade)
    segment[:fade] *= ramp
    segment[-fade:] *= ramp[::-1]
    return np.clip(segment, -1.0, 1.0)


def make_synthetic_corpus(spec: SyntheticCorpusSpec, out_dir) -> Path:
    """Write audio, duration files, and the manifest; returns manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    (out_dir / "dur").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(spec.seed)
    lines = []
    for i in range(spec.num_utterances):
        utt_id = f"syn{i:04d}"
        n_ph = int(rng.integers(spec.min_phonemes, spec.max_phonemes + 1))
        ids = rng.integers(0, spec.vocab_size, size=n_ph)
        speaker = int(rng.integers(0, spec.num_speakers))
        language = int(rng.integers(0, spec.num_languages))

        gain = 0.7 + 0.2 * speaker / max(1, spec.num_speakers - 1)
        segments = [gain * render_phoneme(int(p), spec.seed) for p in ids]
        audio = np.concatenate(segments)
        # Drop one hop so frame_count(len/3) equals the duration sum.
        audio = audio[:-SAMPLES_PER_FRAME_48K]

        write_wav(out_dir / "audio" / f"{utt_id}.wav", Waveform(audio, RATE_48K))
        durations = " ".join(str(phoneme_frames(int(p))) for p in ids)
        (out_dir / "dur" / f"{utt_id}.dur").write_text(durations + "\n")

        tokens = " ".join(f"p{int(p)}" for p in ids)
        lines.append(
            f"{utt_id} | {tokens} | {speaker} | {language} "
            f"| audio/{utt_id}.wav | dur/{utt_id}.dur"
        )

    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
