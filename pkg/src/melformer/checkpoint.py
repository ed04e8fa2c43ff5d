"""Versioned single-file checkpoints.

Layout (torch.save archive):
    version          format version int (currently 1)
    model_config     ModelConfig as a plain dict
    model_state      parameter/buffer tensors by hierarchical name
    optimizer_state  optimizer state dict, or None
    step             global optimization step
    vocab            phoneme token list (index = embedding id)
    pitch_stats      [mean, std] of corpus log-Hz pitch
"""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import torch

from .config import ModelConfig
from .model import AcousticModel

CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: AcousticModel, *, optimizer=None, step: int = 0,
                    vocab: Optional[list] = None,
                    pitch_stats: Optional[tuple] = None) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "model_config": model.cfg.to_dict(),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "step": step,
        "vocab": list(vocab) if vocab is not None else None,
        "pitch_stats": list(pitch_stats) if pitch_stats is not None else None,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("version")
    if version is None:
        raise ValueError(f"{path}: not a recognized checkpoint (no version field)")
    if version > CHECKPOINT_VERSION:
        raise ValueError(
            f"{path}: checkpoint version {version} is newer than supported "
            f"version {CHECKPOINT_VERSION}"
        )
    return payload


def model_from_checkpoint(payload: dict) -> AcousticModel:
    cfg = ModelConfig.from_dict(payload["model_config"])
    model = AcousticModel(cfg)
    model.load_state_dict(payload["model_state"])
    return model
