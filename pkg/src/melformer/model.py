"""End-to-end acoustic model: phonemes to per-block mel predictions.

Pipeline: phoneme embedding -> phoneme-side conformer stack -> variance
adaptor -> length regulation -> mel-side conformer stack, with every
mel-side block projected to 80 mel channels by its own untied linear map.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch
from torch import nn

from .adaptor import (
    VarianceAdaptor,
    durations_from_log,
    expand_single,
    length_regulator,
)
from .config import ModelConfig
from .conformer import ConformerStack, apply_mask, lengths_to_mask


@dataclass
class Batch:
    """Padded training batch; masks are derived from the length vectors."""

    utt_ids: list
    phonemes: torch.Tensor        # (B, N) long
    phoneme_lengths: torch.Tensor  # (B,)
    speaker_ids: torch.Tensor      # (B,)
    language_ids: torch.Tensor     # (B,)
    durations: torch.Tensor        # (B, N) long
    pitch: torch.Tensor            # (B, N) float
    mel: torch.Tensor              # (B, T, 80) float
    mel_lengths: torch.Tensor      # (B,)

    @property
    def phoneme_mask(self) -> torch.Tensor:
        return lengths_to_mask(self.phoneme_lengths, self.phonemes.shape[1])

    @property
    def mel_mask(self) -> torch.Tensor:
        return lengths_to_mask(self.mel_lengths, self.mel.shape[1])


def collate(items, dtype=torch.float32) -> Batch:
    """Pad a list of PhonemeUtterance items into one Batch."""
    b = len(items)
    n_max = max(it.num_phonemes for it in items)
    t_max = max(it.num_frames for it in items)
    n_mels = items[0].mel.shape[1]

    phonemes = torch.zeros(b, n_max, dtype=torch.int64)
    durations = torch.zeros(b, n_max, dtype=torch.int64)
    pitch = torch.zeros(b, n_max, dtype=dtype)
    mel = torch.zeros(b, t_max, n_mels, dtype=dtype)
    for i, it in enumerate(items):
        n, t = it.num_phonemes, it.num_frames
        phonemes[i, :n] = torch.from_numpy(np.asarray(it.phoneme_ids, dtype=np.int64))
        durations[i, :n] = torch.from_numpy(np.asarray(it.durations, dtype=np.int64))
        pitch[i, :n] = torch.from_numpy(np.asarray(it.pitch)).to(dtype)
        mel[i, :t] = torch.from_numpy(np.asarray(it.mel)).to(dtype)

    return Batch(
        utt_ids=[it.utt_id for it in items],
        phonemes=phonemes,
        phoneme_lengths=torch.tensor([it.num_phonemes for it in items]),
        speaker_ids=torch.tensor([it.speaker_id for it in items]),
        language_ids=torch.tensor([it.language_id for it in items]),
        durations=durations,
        pitch=pitch,
        mel=mel,
        mel_lengths=torch.tensor([it.num_frames for it in items]),
    )


@dataclass
class AcousticOutputs:
    """Everything the loss needs from a training forward pass."""

    mel_per_block: List[torch.Tensor]      # each (B, T', 80)
    pred_pitch: torch.Tensor               # (B, N)
    pred_logdur: torch.Tensor              # (B, N)
    pred_utt_prosody: torch.Tensor         # (B, P_u)
    pred_phoneme_prosody: torch.Tensor     # (B, N, P_p)
    ref_utt_prosody: Optional[torch.Tensor] = None
    ref_phoneme_prosody: Optional[torch.Tensor] = None
    phoneme_mask: Optional[torch.Tensor] = None
    frame_mask: Optional[torch.Tensor] = None
    mel_target: Optional[torch.Tensor] = None
    pitch_target: Optional[torch.Tensor] = None
    duration_target: Optional[torch.Tensor] = None

    @property
    def final_mel(self) -> torch.Tensor:
        return self.mel_per_block[-1]


class AcousticModel(nn.Module):
    """Trainable phoneme-to-mel model with explicit/implicit variance."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.phoneme_embedding = nn.Embedding(cfg.vocab_size, cfg.dim)
        self.phoneme_stack = ConformerStack(
            cfg.phoneme_blocks, cfg.dim, cfg.ff_hidden, cfg.ff_kernel,
            cfg.dw_kernel, cfg.heads, cfg.dropout, cfg.rel_pos_clip)
        self.adaptor = VarianceAdaptor(cfg)
        self.mel_stack = ConformerStack(
            cfg.mel_blocks, cfg.dim, cfg.ff_hidden, cfg.ff_kernel,
            cfg.dw_kernel, cfg.heads, cfg.dropout, cfg.rel_pos_clip)
        self.mel_projections = nn.ModuleList(
            nn.Linear(cfg.dim, cfg.n_mels) for _ in range(cfg.mel_blocks)
        )

    def encode_phonemes(self, phonemes: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if phonemes.min() < 0 or phonemes.max() >= self.cfg.vocab_size:
            raise ValueError(
                f"phoneme id out of range [0, {self.cfg.vocab_size})"
            )
        h = apply_mask(self.phoneme_embedding(phonemes), mask)
        h, _ = self.phoneme_stack(h, mask)
        return h

    def decode_mel(self, frames: torch.Tensor, frame_mask: torch.Tensor):
        _, per_block = self.mel_stack(frames, frame_mask)
        return [
            apply_mask(proj(block), frame_mask)
            for proj, block in zip(self.mel_projections, per_block)
        ]

    def forward_train(self, batch: Batch) -> AcousticOutputs:
        """Teacher-forced forward pass for training."""
        dur_sums = (batch.durations * batch.phoneme_mask).sum(dim=1)
        for i, utt_id in enumerate(batch.utt_ids):
            if int(dur_sums[i]) != int(batch.mel_lengths[i]):
                raise ValueError(
                    f"utterance {utt_id!r}: durations sum to {int(dur_sums[i])} "
                    f"but mel has {int(batch.mel_lengths[i])} frames"
                )

        ph_mask = batch.phoneme_mask
        mel_mask = batch.mel_mask
        h = self.encode_phonemes(batch.phonemes, ph_mask)

        adaptor = self.adaptor
        ref_utt = adaptor.utterance_reference(batch.mel, batch.mel_lengths)
        ref_phoneme = adaptor.phoneme_reference(batch.mel, mel_mask, h, ph_mask)

        s1 = adaptor.fuse_explicit(h, ph_mask, batch.speaker_ids, batch.language_ids)
        pred_utt = adaptor.utterance_predictor(s1, batch.phoneme_lengths)

        s2 = adaptor.fuse_utterance(s1, ph_mask, ref_utt)
        pred_phoneme = adaptor.phoneme_predictor(s2, ref_utt, ph_mask)

        s3 = adaptor.fuse_phoneme(s2, ph_mask, ref_phoneme)
        pred_pitch = adaptor.pitch_predictor(s3, ph_mask)

        s4 = adaptor.fuse_pitch(s3, ph_mask, batch.pitch)
        pred_logdur = adaptor.duration_predictor(s4, ph_mask)

        frames, _, frame_mask = length_regulator(s4, batch.durations, ph_mask)
        mel_per_block = self.decode_mel(frames, frame_mask)

        return AcousticOutputs(
            mel_per_block=mel_per_block,
            pred_pitch=pred_pitch,
            pred_logdur=pred_logdur,
            pred_utt_prosody=pred_utt,
            pred_phoneme_prosody=pred_phoneme,
            ref_utt_prosody=ref_utt,
            ref_phoneme_prosody=ref_phoneme,
            phoneme_mask=ph_mask,
            frame_mask=frame_mask,
            mel_target=batch.mel,
            pitch_target=batch.pitch,
            duration_target=batch.durations,
        )

    @torch.no_grad()
    def forward_infer(self, phonemes, speaker_id: int, language_id: int, *,
                      durations=None, pitch=None, utt_prosody=None,
                      phoneme_prosody=None) -> torch.Tensor:
        """Predict a mel-spectrogram (T', 80) for one phoneme sequence.

        All variance streams come from the predictors unless explicitly
        overridden; overrides follow the exact fusion path training uses.
        """
        phonemes = torch.as_tensor(phonemes, dtype=torch.int64)
        if phonemes.ndim != 1 or len(phonemes) == 0:
            raise ValueError("phonemes must be a non-empty 1-D id sequence")
        device = self.phoneme_embedding.weight.device
        dtype = self.phoneme_embedding.weight.dtype
        n = len(phonemes)
        ids = phonemes.unsqueeze(0).to(device)
        mask = torch.ones(1, n, dtype=torch.bool, device=device)
        lengths = torch.tensor([n], device=device)
        speaker_ids = torch.tensor([speaker_id], device=device)
        language_ids = torch.tensor([language_id], device=device)

        h = self.encode_phonemes(ids, mask)
        adaptor = self.adaptor

        s1 = adaptor.fuse_explicit(h, mask, speaker_ids, language_ids)
        if utt_prosody is None:
            utt_prosody = adaptor.utterance_predictor(s1, lengths)

        s2 = adaptor.fuse_utterance(s1, mask, utt_prosody)
        if phoneme_prosody is None:
            phoneme_prosody = adaptor.phoneme_predictor(s2, utt_prosody, mask)

        s3 = adaptor.fuse_phoneme(s2, mask, phoneme_prosody)
        if pitch is None:
            pitch = adaptor.pitch_predictor(s3, mask)
        else:
            pitch = torch.as_tensor(pitch, dtype=dtype, device=device).reshape(1, n)

        s4 = adaptor.fuse_pitch(s3, mask, pitch)
        if durations is None:
            pred_logdur = adaptor.duration_predictor(s4, mask)
            durations = durations_from_log(pred_logdur)[0]
        else:
            durations = torch.as_tensor(durations, dtype=torch.int64, device=device)

        frames = expand_single(s4[0], durations).unsqueeze(0)
        frame_mask = torch.ones(1, frames.shape[1], dtype=torch.bool, device=device)
        mel_per_block = self.decode_mel(frames, frame_mask)
        return mel_per_block[-1][0]

    def count_parameters(self) -> dict:
        """Trainable parameter counts per direct submodule plus the total."""
        counts = {}
        for name, module in self.named_children():
            counts[name] = sum(p.numel() for p in module.parameters() if p.requires_grad)
        counts["total"] = sum(p.numel() for p in self.parameters() if p.requires_grad)
        return counts
