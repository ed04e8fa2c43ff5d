"""Model and training configuration with named presets."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional


@dataclass
class ModelConfig:
    """All architecture hyperparameters.

    The default values are the full-size ("paper") preset: 6+6 conformer
    blocks with attention dim 384 and feed-forward hidden size 1536.
    """

    vocab_size: int = 64
    n_speakers: int = 2
    n_languages: int = 2

    # Conformer stacks.
    dim: int = 384
    phoneme_blocks: int = 6
    mel_blocks: int = 6
    ff_hidden: int = 1536
    ff_kernel: int = 3
    dw_kernel: int = 7
    heads: int = 4
    dropout: float = 0.1
    rel_pos_clip: int = 1024

    # Mel output.
    n_mels: int = 80

    # Prosody vectors.
    utt_prosody_dim: int = 256
    phoneme_prosody_dim: int = 32
    style_tokens: int = 10
    style_heads: int = 4

    # Reference encoders.
    ref_conv_channels: int = 32
    ref_gru_hidden: int = 256
    phoneme_ref_dim: int = 128

    # Predictors.
    predictor_hidden: int = 256
    predictor_kernel: int = 3
    prosody_predictor_kernel: int = 3
    utt_bottleneck: int = 64

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.dw_kernel % 2 == 0:
            raise ValueError(f"depthwise kernel must be odd, got {self.dw_kernel}")
        if self.ff_kernel % 2 == 0:
            raise ValueError(f"feed-forward kernel must be odd, got {self.ff_kernel}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def paper_config(**overrides) -> ModelConfig:
    """Full-size preset: 6+6 blocks, dim 384, ff 1536, depthwise kernel 7."""
    return ModelConfig(**overrides)


def toy_config(**overrides) -> ModelConfig:
    """Desk-scale preset (2+2 blocks, dim 64, ff 256) for tests and demos."""
    defaults = dict(
        dim=64,
        phoneme_blocks=2,
        mel_blocks=2,
        ff_hidden=256,
        heads=4,
        dropout=0.0,
        utt_prosody_dim=32,
        phoneme_prosody_dim=8,
        style_tokens=4,
        style_heads=2,
        ref_conv_channels=8,
        ref_gru_hidden=32,
        phoneme_ref_dim=32,
        predictor_hidden=32,
        utt_bottleneck=16,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


PRESETS = {"paper": paper_config, "toy": toy_config}


def make_model_config(preset: str = "paper", **overrides) -> ModelConfig:
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    return PRESETS[preset](**overrides)


@dataclass
class TrainConfig:
    """Training hyperparameters and data locations."""

    preset: str = "paper"
    model_overrides: dict = field(default_factory=dict)

    frame_budget: int = 6000
    max_steps: int = 2000
    pretrain_steps: int = 1000
    pretrain_manifest: Optional[str] = None
    finetune_manifest: Optional[str] = None
    cache_dir: Optional[str] = None
    out_dir: str = "runs/default"
    seed: int = 0

    # Warmup-decay schedule: linear warmup to the peak rate, then
    # inverse-square-root decay. The peak is 1e-3 at dim 384 and scales
    # with 1/sqrt(dim).
    warmup_steps: int = 4000
    lr_factor: float = 1e-3 * 384**0.5
    adam_betas: tuple = (0.9, 0.98)
    adam_eps: float = 1e-9
    grad_clip: float = 1.0

    checkpoint_every: int = 500
    log_every: int = 10

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {k: v for k, v in d.items() if k in known}
        if "adam_betas" in kwargs:
            kwargs["adam_betas"] = tuple(kwargs["adam_betas"])
        return cls(**kwargs)

    def peak_lr(self, dim: int) -> float:
        return self.lr_factor / dim**0.5
