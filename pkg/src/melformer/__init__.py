"""Non-autoregressive conformer TTS: phoneme-to-mel acoustic model with
explicit/implicit variance modeling and a 16 kHz-mel to 48 kHz-waveform
vocoder bridge.
"""
from .config import ModelConfig, TrainConfig, make_model_config, paper_config, toy_config
from .model import AcousticModel, AcousticOutputs, Batch, collate
from .losses import LossBreakdown, iterative_mel_loss, masked_l1, ssim, total_loss
from .adaptor import (
    EmptyExpansionError,
    VarianceAdaptor,
    durations_from_log,
    expand_single,
    length_regulator,
    log_duration_targets,
)
from .vocoder import (
    VocoderContractError,
    available_vocoders,
    baseline_vocode,
    register_vocoder,
    vocode,
)
from .checkpoint import load_checkpoint, model_from_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "TrainConfig", "make_model_config", "paper_config", "toy_config",
    "AcousticModel", "AcousticOutputs", "Batch", "collate",
    "LossBreakdown", "iterative_mel_loss", "masked_l1", "ssim", "total_loss",
    "EmptyExpansionError", "VarianceAdaptor", "durations_from_log",
    "expand_single", "length_regulator", "log_duration_targets",
    "VocoderContractError", "available_vocoders", "baseline_vocode",
    "register_vocoder", "vocode",
    "load_checkpoint", "model_from_checkpoint", "save_checkpoint",
    "__version__",
]
