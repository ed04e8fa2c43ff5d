"""Dataset manifest parsing, feature cache, and preprocessing.

Manifest format: one utterance per line, "|"-separated fields:

    utt_id | space-separated phoneme tokens | speaker_id | language_id \
        | relative audio path | relative duration-file path

Duration files hold one integer frame count per phoneme, whitespace
separated. Cached arrays are raw little-endian float32, row-major, with
a JSON sidecar carrying shape, dtype, hop, and sample rate.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .audio import read_wav, resample_48k_to_16k
from .mel import HOP_SAMPLES, compute_mel
from .pitch import extract_pitch, phoneme_log_pitch


class DataError(Exception):
    """Malformed manifest, missing files, or inconsistent targets."""


@dataclass
class ManifestEntry:
    utt_id: str
    phonemes: list
    speaker_id: int
    language_id: int
    audio_path: Path
    duration_path: Path


@dataclass
class PhonemeUtterance:
    """One training/inference item with optional targets."""

    utt_id: str
    phoneme_ids: np.ndarray
    speaker_id: int
    language_id: int
    mel: Optional[np.ndarray] = None
    durations: Optional[np.ndarray] = None
    pitch: Optional[np.ndarray] = None

    @property
    def num_phonemes(self) -> int:
        return len(self.phoneme_ids)

    @property
    def num_frames(self) -> int:
        return 0 if self.mel is None else self.mel.shape[0]


def parse_manifest(path) -> list:
    """Parse a manifest file into entries; paths stay relative to it."""
    path = Path(path)
    root = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 6:
            raise DataError(f"{path}:{lineno}: expected 6 '|' fields, got {len(parts)}")
        utt_id, tokens, spk, lang, audio, dur = parts
        if not tokens:
            raise DataError(f"{path}:{lineno}: utterance {utt_id!r} has no phonemes")
        try:
            speaker_id, language_id = int(spk), int(lang)
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: bad speaker/language id: {e}") from e
        entries.append(ManifestEntry(
            utt_id=utt_id,
            phonemes=tokens.split(),
            speaker_id=speaker_id,
            language_id=language_id,
            audio_path=root / audio,
            duration_path=root / dur,
        ))
    if not entries:
        raise DataError(f"{path}: empty manifest")
    ids = [e.utt_id for e in entries]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate utterance ids")
    return entries


def read_durations(path) -> np.ndarray:
    try:
        values = [int(tok) for tok in Path(path).read_text().split()]
    except ValueError as e:
        raise DataError(f"{path}: non-integer duration: {e}") from e
    durations = np.asarray(values, dtype=np.int64)
    if np.any(durations < 0):
        raise DataError(f"{path}: negative duration")
    return durations


def build_vocabulary(entries) -> list:
    """Sorted list of phoneme tokens appearing in the entries."""
    tokens = set()
    for e in entries:
        tokens.update(e.phonemes)
    return sorted(tokens)


def encode_phonemes(tokens, vocab) -> np.ndarray:
    index = {tok: i for i, tok in enumerate(vocab)}
    try:
        return np.asarray([index[t] for t in tokens], dtype=np.int64)
    except KeyError as e:
        raise DataError(f"unknown phoneme token {e.args[0]!r}") from e


def save_array(cache_dir, name: str, array: np.ndarray,
               hop_samples: int = HOP_SAMPLES, sample_rate: int = 16000) -> None:
    """Write raw little-endian float32 plus JSON sidecar."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(array, dtype="<f4")
    (cache_dir / f"{name}.f32").write_bytes(data.tobytes())
    sidecar = {
        "shape": list(data.shape),
        "dtype": "float32",
        "hop_samples": hop_samples,
        "sample_rate": sample_rate,
    }
    (cache_dir / f"{name}.json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_array(cache_dir, name: str) -> np.ndarray:
    cache_dir = Path(cache_dir)
    sidecar_path = cache_dir / f"{name}.json"
    raw_path = cache_dir / f"{name}.f32"
    if not sidecar_path.exists() or not raw_path.exists():
        raise DataError(f"missing cached feature {name!r} in {cache_dir}")
    sidecar = json.loads(sidecar_path.read_text())
    if sidecar.get("dtype") != "float32":
        raise DataError(f"{sidecar_path}: unsupported dtype {sidecar.get('dtype')!r}")
    data = np.frombuffer(raw_path.read_bytes(), dtype="<f4")
    return data.reshape(sidecar["shape"]).astype(np.float64)


def prepare_dataset(manifest_path, cache_dir,
                    pitch_stats: Optional[tuple] = None) -> dict:
    """Extract and cache mel and per-phoneme pitch for every utterance.

    Returns the cache metadata (vocabulary and pitch statistics). When
    pitch_stats is given it is reused instead of being estimated, so a
    finetune corpus can share the pretrain normalization.
    """
    entries = parse_manifest(manifest_path)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)

    vocab = build_vocabulary(entries)
    mels, raw_log_pitch, durations_all = {}, {}, {}
    for e in entries:
        wav = read_wav(e.audio_path)
        if wav.sample_rate == 48000:
            wav = resample_48k_to_16k(wav)
        mel = compute_mel(wav)
        durations = read_durations(e.duration_path)
        if len(durations) != len(e.phonemes):
            raise DataError(
                f"{e.utt_id}: {len(e.phonemes)} phonemes but {len(durations)} durations"
            )
        if int(durations.sum()) != mel.num_frames:
            raise DataError(
                f"{e.utt_id}: durations sum to {int(durations.sum())} "
                f"but mel has {mel.num_frames} frames"
            )
        contour = extract_pitch(wav)
        mels[e.utt_id] = mel.frames
        durations_all[e.utt_id] = durations
        # Raw log-Hz (None for all-unvoiced); standardized once corpus
        # stats are known.
        raw_log_pitch[e.utt_id] = phoneme_log_pitch(contour, durations)

    if pitch_stats is None:
        values = [v for v in raw_log_pitch.values() if v is not None]
        if values:
            logs = np.concatenate(values)
            mean = float(logs.mean())
            std = float(logs.std())
        else:
            mean, std = 0.0, 1.0
        if std < 1e-6:
            std = 1.0
        pitch_stats = (mean, std)
    mean, std = pitch_stats

    for e in entries:
        save_array(cache_dir, f"{e.utt_id}.mel", mels[e.utt_id])
        raw = raw_log_pitch[e.utt_id]
        if raw is None:
            standardized = np.zeros(len(durations_all[e.utt_id]))
        else:
            standardized = (raw - mean) / std
        save_array(cache_dir, f"{e.utt_id}.pitch", standardized)

    meta = {"vocab": vocab, "pitch_mean": mean, "pitch_std": std}
    (cache_dir / "dataset.json").write_text(json.dumps(meta, indent=2) + "\n")
    return meta


def load_dataset_meta(cache_dir) -> dict:
    path = Path(cache_dir) / "dataset.json"
    if not path.exists():
        raise DataError(f"no dataset.json in {cache_dir}; run prepare-data first")
    return json.loads(path.read_text())


def load_utterances(manifest_path, cache_dir, vocab) -> list:
    """Assemble PhonemeUtterance items from manifest plus cached features."""
    entries = parse_manifest(manifest_path)
    items = []
    for e in entries:
        mel = load_array(cache_dir, f"{e.utt_id}.mel")
        pitch = load_array(cache_dir, f"{e.utt_id}.pitch")
        durations = read_durations(e.duration_path)
        items.append(PhonemeUtterance(
            utt_id=e.utt_id,
            phoneme_ids=encode_phonemes(e.phonemes, vocab),
            speaker_id=e.speaker_id,
            language_id=e.language_id,
            mel=mel,
            durations=durations,
            pitch=pitch,
        ))
    return items
