"""Deterministic audio/feature pipeline: resampling, mel, F0, dataset I/O."""
from .audio import SampleRateError, Waveform, read_wav, resample_48k_to_16k, write_wav
from .mel import (
    HOP_SAMPLES,
    MelSpectrogram,
    N_MELS,
    SAMPLE_RATE,
    WIN_SAMPLES,
    compute_mel,
    frame_count,
    mel_center_frequencies,
    mel_filterbank,
)
from .pitch import (
    PitchContour,
    extract_pitch,
    interpolate_unvoiced,
    phoneme_log_pitch,
    phoneme_pitch_targets,
)
from .dataset import (
    DataError,
    ManifestEntry,
    PhonemeUtterance,
    build_vocabulary,
    encode_phonemes,
    load_array,
    load_dataset_meta,
    load_utterances,
    parse_manifest,
    prepare_dataset,
    read_durations,
    save_array,
)

__all__ = [
    "SampleRateError", "Waveform", "read_wav", "resample_48k_to_16k", "write_wav",
    "HOP_SAMPLES", "MelSpectrogram", "N_MELS", "SAMPLE_RATE", "WIN_SAMPLES",
    "compute_mel", "frame_count", "mel_center_frequencies", "mel_filterbank",
    "PitchContour", "extract_pitch", "interpolate_unvoiced",
    "phoneme_log_pitch", "phoneme_pitch_targets",
    "DataError", "ManifestEntry", "PhonemeUtterance", "build_vocabulary",
    "encode_phonemes", "load_array", "load_dataset_meta", "load_utterances",
    "parse_manifest", "prepare_dataset", "read_durations", "save_array",
]
