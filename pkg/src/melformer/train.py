"""Optimization loop: frame-budget batching, warmup-decay Adam, two-phase
pretrain/finetune flow, JSON-lines metrics, and synthesis.
"""
from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .batching import build_batches
from .checkpoint import load_checkpoint, model_from_checkpoint, save_checkpoint
from .config import ModelConfig, TrainConfig, make_model_config
from .features.dataset import (
    DataError,
    load_dataset_meta,
    load_utterances,
    parse_manifest,
    save_array,
)
from .losses import masked_l1, total_loss
from .model import AcousticModel, Batch, collate
from .vocoder import vocode


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; the last good checkpoint is kept on disk."""


def set_seed(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def learning_rate(step: int, warmup: int, peak: float) -> float:
    """Linear warmup to the peak, then inverse-square-root decay."""
    step = max(step, 1)
    return peak * min(step / warmup, (warmup / step) ** 0.5)


def _scan_id_bounds(manifests) -> tuple:
    n_speakers, n_languages = 1, 1
    for manifest in manifests:
        for e in parse_manifest(manifest):
            n_speakers = max(n_speakers, e.speaker_id + 1)
            n_languages = max(n_languages, e.language_id + 1)
    return n_speakers, n_languages


class Trainer:
    """Single-writer optimization over cached features."""

    def __init__(self, model: AcousticModel, cfg: TrainConfig, out_dir,
                 vocab, pitch_stats):
        self.model = model
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.vocab = vocab
        self.pitch_stats = pitch_stats
        self.step = 0
        self.peak = cfg.peak_lr(model.cfg.dim)
        self.optimizer = self._fresh_optimizer()
        self._metrics = self.out_dir / "metrics.jsonl"

    def _fresh_optimizer(self):
        return torch.optim.Adam(
            self.model.parameters(), lr=self.peak,
            betas=self.cfg.adam_betas, eps=self.cfg.adam_eps,
        )

    def reset_optimizer(self) -> None:
        """Phase boundary: new optimizer state and schedule, same weights."""
        self.optimizer = self._fresh_optimizer()
        self.step = 0

    def _log(self, record: dict) -> None:
        with self._metrics.open("a") as f:
            f.write(json.dumps(record) + "\n")

    def save(self, name: str) -> Path:
        path = self.out_dir / name
        save_checkpoint(path, self.model, optimizer=self.optimizer,
                        step=self.step, vocab=self.vocab,
                        pitch_stats=self.pitch_stats)
        return path

    def _batches(self, items, epoch: int):
        by_id = {it.utt_id: it for it in items}
        plan = build_batches(((it.utt_id, it.num_frames) for it in items),
                             self.cfg.frame_budget, self.cfg.seed + epoch)
        return [collate([by_id[u] for u in batch]) for batch in plan]

    def train_phase(self, items, steps: int, phase: str) -> None:
        self.model.train()
        epoch = 0
        done = 0
        while done < steps:
            for batch in self._batches(items, epoch):
                if done >= steps:
                    break
                self.step += 1
                done += 1
                lr = learning_rate(self.step, self.cfg.warmup_steps, self.peak)
                for group in self.optimizer.param_groups:
                    group["lr"] = lr

                outputs = self.model.forward_train(batch)
                breakdown = total_loss(outputs)
                if not torch.isfinite(breakdown.total):
                    raise TrainingDiverged(
                        f"non-finite loss at step {self.step} ({phase}); "
                        f"last checkpoint kept in {self.out_dir}"
                    )
                self.optimizer.zero_grad()
                breakdown.total.backward()
                torch.nn.utils.clip_grad_norm_(self.model.parameters(),
                                               self.cfg.grad_clip)
                self.optimizer.step()

                if self.step % self.cfg.log_every == 0 or done == steps:
                    self._log({"step": self.step, "phase": phase, "lr": lr,
                               **breakdown.to_dict()})
                if self.step % self.cfg.checkpoint_every == 0:
                    self.save("checkpoint.pt")
            epoch += 1

    @torch.no_grad()
    def evaluate(self, items) -> dict:
        """Teacher-forced loss breakdown averaged over the dataset."""
        self.model.eval()
        totals, count = {}, 0
        for batch in self._batches(items, epoch=0):
            outputs = self.model.forward_train(batch)
            breakdown = total_loss(outputs).to_dict()
            breakdown["mel_l1_final"] = float(masked_l1(
                outputs.final_mel, outputs.mel_target, outputs.frame_mask))
            n = len(batch.utt_ids)
            for key, value in breakdown.items():
                totals[key] = totals.get(key, 0.0) + value * n
            count += n
        self.model.train()
        return {k: v / count for k, v in totals.items()}


def run_training(cfg: TrainConfig) -> Path:
    """Train per the config and return the final checkpoint path.

    With both manifests set this runs the two-phase flow: pretrain, then
    finetune starting from the pretrained weights with a fresh optimizer.
    """
    if cfg.cache_dir is None:
        raise DataError("train config needs cache_dir (run prepare-data first)")
    manifests = [m for m in (cfg.pretrain_manifest, cfg.finetune_manifest) if m]
    if not manifests:
        raise DataError("train config needs pretrain_manifest and/or finetune_manifest")

    set_seed(cfg.seed)
    meta = load_dataset_meta(cfg.cache_dir)
    vocab = meta["vocab"]
    pitch_stats = (meta["pitch_mean"], meta["pitch_std"])

    overrides = dict(cfg.model_overrides)
    overrides.setdefault("vocab_size", len(vocab))
    if "n_speakers" not in overrides or "n_languages" not in overrides:
        n_spk, n_lang = _scan_id_bounds(manifests)
        overrides.setdefault("n_speakers", n_spk)
        overrides.setdefault("n_languages", n_lang)
    model_cfg = make_model_config(cfg.preset, **overrides)
    model = AcousticModel(model_cfg)

    trainer = Trainer(model, cfg, cfg.out_dir, vocab, pitch_stats)

    two_phase = cfg.pretrain_manifest and cfg.finetune_manifest
    if two_phase:
        pretrain_items = load_utterances(cfg.pretrain_manifest, cfg.cache_dir, vocab)
        trainer.train_phase(pretrain_items, cfg.pretrain_steps, "pretrain")
        trainer.save("pretrain.pt")
        trainer.reset_optimizer()
        items = load_utterances(cfg.finetune_manifest, cfg.cache_dir, vocab)
        trainer.train_phase(items, cfg.max_steps, "finetune")
    else:
        items = load_utterances(manifests[0], cfg.cache_dir, vocab)
        trainer.train_phase(items, cfg.max_steps, "train")

    final = trainer.save("checkpoint.pt")
    metrics = trainer.evaluate(items)
    trainer._log({"step": trainer.step, "phase": "eval", **metrics})
    return final


def synthesize(checkpoint_path, phoneme_tokens, speaker_id: int,
               language_id: int, out_dir, name: str = "synth",
               vocoder_name: Optional[str] = None):
    """Generate a mel file (feature-cache format) and optionally a waveform.

    Returns (mel_path, wav_path or None).
    """
    payload = load_checkpoint(checkpoint_path)
    model = model_from_checkpoint(payload)
    model.eval()

    vocab = payload["vocab"]
    if vocab is None:
        raise DataError(f"{checkpoint_path}: checkpoint carries no vocabulary")
    index = {tok: i for i, tok in enumerate(vocab)}
    unknown = [t for t in phoneme_tokens if t not in index]
    if unknown:
        raise DataError(f"unknown phoneme tokens {unknown}; known: {vocab}")
    ids = [index[t] for t in phoneme_tokens]

    cfg = model.cfg
    if not 0 <= speaker_id < cfg.n_speakers:
        raise DataError(
            f"unknown speaker id {speaker_id}; known ids: 0..{cfg.n_speakers - 1}"
        )
    if not 0 <= language_id < cfg.n_languages:
        raise DataError(
            f"unknown language id {language_id}; known ids: 0..{cfg.n_languages - 1}"
        )

    mel = model.forward_infer(ids, speaker_id, language_id)
    mel_np = mel.detach().cpu().numpy()

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_array(out_dir, f"{name}.mel", mel_np)
    mel_path = out_dir / f"{name}.mel.f32"

    wav_path = None
    if vocoder_name:
        from .features.audio import write_wav

        wav = vocode(mel_np, vocoder_name)
        wav_path = out_dir / f"{name}.wav"
        write_wav(wav_path, wav)
    return mel_path, wav_path
