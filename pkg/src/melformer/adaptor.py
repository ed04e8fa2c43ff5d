"""Unified explicit/implicit variation modeling.

Explicit streams: speaker/language lookup embeddings, pitch, duration.
Implicit streams: utterance-level and phoneme-level prosody latents,
extracted by reference encoders from the ground-truth mel at training
time and produced by predictors at inference time.

Fusion order (each stream is added to the phoneme hidden sequence, and
every predictor sees the stream augmented by everything before it):
speaker/language -> utterance prosody -> phoneme prosody -> pitch ->
duration/length regulation.
"""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .conformer import apply_mask


class EmptyExpansionError(ValueError):
    """Raised when length regulation would produce zero frames."""


def log_duration_targets(durations: torch.Tensor) -> torch.Tensor:
    """ln(frames + 1), the domain the duration predictor is trained in."""
    return torch.log(durations.to(torch.float64) + 1.0)


def durations_from_log(pred: torch.Tensor) -> torch.Tensor:
    """Invert the log-domain prediction: max(0, round(exp(pred) - 1)).

    Rounding is half-up.
    """
    frames = torch.floor(torch.exp(pred.to(torch.float64)) - 1.0 + 0.5)
    return frames.clamp(min=0).to(torch.int64)


def expand_single(hidden: torch.Tensor, durations: torch.Tensor) -> torch.Tensor:
    """Repeat row i of (N, D) durations[i] times, order preserved."""
    durations = durations.to(torch.int64)
    if durations.min() < 0:
        raise ValueError("durations must be non-negative")
    if int(durations.sum()) == 0:
        raise EmptyExpansionError("empty expansion: all durations are zero")
    return torch.repeat_interleave(hidden, durations, dim=0)


def length_regulator(hidden: torch.Tensor, durations: torch.Tensor,
                     phoneme_mask: torch.Tensor):
    """Expand (B, N, D) phoneme hiddens to frame scale per item.

    Returns (frames (B, T'max, D), frame_lengths (B,), frame_mask).
    """
    b = hidden.shape[0]
    durations = durations.to(torch.int64) * phoneme_mask.to(torch.int64)
    lengths = durations.sum(dim=1)
    if int(lengths.min()) == 0:
        bad = int(lengths.argmin())
        raise EmptyExpansionError(f"empty expansion: batch item {bad} has zero total duration")
    t_max = int(lengths.max())
    rows = [expand_single(hidden[i], durations[i]) for i in range(b)]
    out = torch.stack([
        F.pad(r, (0, 0, 0, t_max - r.shape[0])) for r in rows
    ])
    steps = torch.arange(t_max, device=hidden.device)
    frame_mask = steps.unsqueeze(0) < lengths.unsqueeze(1)
    return out, lengths, frame_mask


def _gather_last_valid(outputs: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """outputs (B, T, H), lengths (B,) -> hidden at the last valid step."""
    idx = (lengths.clamp(min=1) - 1).view(-1, 1, 1).expand(-1, 1, outputs.shape[2])
    return outputs.gather(1, idx).squeeze(1)


class StyleTokenLayer(nn.Module):
    """Learned token bank attended by a reference summary vector.

    No value projection: the output is, per head, a convex combination of
    the raw token vectors, so attention weights fully explain it.
    """

    def __init__(self, query_dim: int, prosody_dim: int, n_tokens: int, heads: int):
        super().__init__()
        if prosody_dim % heads != 0:
            raise ValueError(f"prosody dim {prosody_dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = prosody_dim // heads
        self.tokens = nn.Parameter(torch.randn(n_tokens, prosody_dim) * 0.3)
        self.query_proj = nn.Linear(query_dim, prosody_dim)
        self.key_proj = nn.Linear(prosody_dim, prosody_dim, bias=False)

    def forward(self, query: torch.Tensor):
        """query (B, query_dim) -> (prosody vector (B, P), weights (B, heads, K))."""
        b = query.shape[0]
        q = self.query_proj(query).view(b, self.heads, self.head_dim)
        keys = self.key_proj(torch.tanh(self.tokens)).view(-1, self.heads, self.head_dim)
        scores = torch.einsum("bhd,khd->bhk", q, keys) / math.sqrt(self.head_dim)
        weights = torch.softmax(scores, dim=-1)
        values = self.tokens.view(-1, self.heads, self.head_dim)
        out = torch.einsum("bhk,khd->bhd", weights, values).reshape(b, -1)
        return out, weights


class UtteranceReferenceEncoder(nn.Module):
    """Mel -> utterance prosody vector via convs, a GRU, and style tokens."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.ref_conv_channels
        channels = [1, c, c, 2 * c]
        self.convs = nn.ModuleList(
            nn.Conv2d(channels[i], channels[i + 1], 3, stride=2, padding=1)
            for i in range(3)
        )
        freq = cfg.n_mels
        for _ in range(3):
            freq = (freq + 1) // 2
        self.gru = nn.GRU(2 * c * freq, cfg.ref_gru_hidden, batch_first=True)
        self.style = StyleTokenLayer(cfg.ref_gru_hidden, cfg.utt_prosody_dim,
                                     cfg.style_tokens, cfg.style_heads)

    def forward(self, mel: torch.Tensor, mel_lengths: torch.Tensor) -> torch.Tensor:
        """mel (B, T, n_mels) zero-padded -> (B, utt_prosody_dim)."""
        x = mel.unsqueeze(1)
        lengths = mel_lengths
        for conv in self.convs:
            x = F.relu(conv(x))
            lengths = torch.div(lengths + 1, 2, rounding_mode="floor")
            # Zero frames past each item's valid length so later convs and
            # the GRU match a solo (unpadded) run.
            steps = torch.arange(x.shape[2], device=x.device)
            valid = steps.view(1, 1, -1, 1) < lengths.view(-1, 1, 1, 1)
            x = x * valid.to(x.dtype)
        b, ch, t, freq = x.shape
        x = x.permute(0, 2, 1, 3).reshape(b, t, ch * freq)
        outputs, _ = self.gru(x)
        summary = _gather_last_valid(outputs, lengths)
        vector, _ = self.style(summary)
        return vector


class PhonemeReferenceEncoder(nn.Module):
    """Frame-level mel encoding attended by phoneme hiddens.

    Single-head scaled-dot attention; frame encodings serve as both keys
    and values, so padded frames receive exactly zero weight.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        e = cfg.phoneme_ref_dim
        self.conv1 = nn.Conv1d(cfg.n_mels, e, 3, padding=1)
        self.conv2 = nn.Conv1d(e, e, 3, padding=1)
        self.gru = nn.GRU(e, e, batch_first=True)
        self.query_proj = nn.Linear(cfg.dim, e)
        self.key_proj = nn.Linear(e, e)
        self.out_proj = nn.Linear(e, cfg.phoneme_prosody_dim)
        self.scale = math.sqrt(e)

    def encode_frames(self, mel: torch.Tensor, frame_mask: torch.Tensor) -> torch.Tensor:
        m = frame_mask.unsqueeze(1).to(mel.dtype)
        x = mel.transpose(1, 2) * m
        x = F.relu(self.conv1(x)) * m
        x = F.relu(self.conv2(x)) * m
        outputs, _ = self.gru(x.transpose(1, 2))
        return apply_mask(outputs, frame_mask)

    def forward(self, mel: torch.Tensor, frame_mask: torch.Tensor,
                phoneme_hidden: torch.Tensor, phoneme_mask: torch.Tensor) -> torch.Tensor:
        frames = self.encode_frames(mel, frame_mask)
        q = self.query_proj(phoneme_hidden)
        k = self.key_proj(frames)
        scores = torch.bmm(q, k.transpose(1, 2)) / self.scale
        scores = scores.masked_fill(~frame_mask.unsqueeze(1), torch.finfo(scores.dtype).min)
        weights = torch.softmax(scores, dim=-1)
        weights = weights.masked_fill(~frame_mask.unsqueeze(1), 0.0)
        context = torch.bmm(weights, frames)
        return apply_mask(self.out_proj(context), phoneme_mask)


class UtteranceProsodyPredictor(nn.Module):
    """Gated recurrence over phoneme hiddens plus a bottleneck."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.gru = nn.GRU(cfg.dim, cfg.ref_gru_hidden, batch_first=True)
        self.bottleneck = nn.Sequential(
            nn.Linear(cfg.ref_gru_hidden, cfg.utt_bottleneck),
            nn.ReLU(),
            nn.Linear(cfg.utt_bottleneck, cfg.utt_prosody_dim),
        )

    def forward(self, phoneme_hidden: torch.Tensor, phoneme_lengths: torch.Tensor) -> torch.Tensor:
        outputs, _ = self.gru(phoneme_hidden)
        return self.bottleneck(_gather_last_valid(outputs, phoneme_lengths))


class PhonemeProsodyPredictor(nn.Module):
    """Per-phoneme prosody from the hidden stream and the utterance vector.

    Fully parallel across phonemes; the utterance vector is broadcast and
    concatenated to every position.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        k = cfg.prosody_predictor_kernel
        h = cfg.predictor_hidden
        self.conv1 = nn.Conv1d(cfg.dim + cfg.utt_prosody_dim, h, k, padding=k // 2)
        self.conv2 = nn.Conv1d(h, h, k, padding=k // 2)
        self.norm1 = nn.LayerNorm(h)
        self.norm2 = nn.LayerNorm(h)
        self.dropout = nn.Dropout(cfg.dropout)
        self.out_proj = nn.Linear(h, cfg.phoneme_prosody_dim)

    def forward(self, phoneme_hidden: torch.Tensor, utt_vector: torch.Tensor,
                phoneme_mask: torch.Tensor) -> torch.Tensor:
        n = phoneme_hidden.shape[1]
        u = utt_vector.unsqueeze(1).expand(-1, n, -1)
        x = apply_mask(torch.cat([phoneme_hidden, u], dim=-1), phoneme_mask)
        m = phoneme_mask.unsqueeze(1).to(x.dtype)
        x = F.relu(self.conv1(x.transpose(1, 2)) * m)
        x = self.dropout(self.norm1(x.transpose(1, 2)))
        x = apply_mask(x, phoneme_mask)
        x = F.relu(self.conv2(x.transpose(1, 2)) * m)
        x = self.dropout(self.norm2(x.transpose(1, 2)))
        return apply_mask(self.out_proj(x), phoneme_mask)


class VariancePredictor(nn.Module):
    """Two masked conv layers with layer norm, then a scalar per position.

    Used for both pitch (normalized log-Hz) and duration (log-frames).
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        k = cfg.predictor_kernel
        h = cfg.predictor_hidden
        self.conv1 = nn.Conv1d(cfg.dim, h, k, padding=k // 2)
        self.conv2 = nn.Conv1d(h, h, k, padding=k // 2)
        self.norm1 = nn.LayerNorm(h)
        self.norm2 = nn.LayerNorm(h)
        self.dropout = nn.Dropout(cfg.dropout)
        self.out_proj = nn.Linear(h, 1)

    def forward(self, hidden: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        m = mask.unsqueeze(1).to(hidden.dtype)
        x = apply_mask(hidden, mask)
        x = F.relu(self.conv1(x.transpose(1, 2)) * m)
        x = self.dropout(self.norm1(x.transpose(1, 2)))
        x = apply_mask(x, mask)
        x = F.relu(self.conv2(x.transpose(1, 2)) * m)
        x = self.dropout(self.norm2(x.transpose(1, 2)))
        return self.out_proj(x).squeeze(-1) * mask.to(hidden.dtype)


class VarianceAdaptor(nn.Module):
    """All variance streams plus the staged fusion into the hidden sequence.

    The fuse_* methods are the single code path for both training
    (teacher-forced values) and inference (predicted values).
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.speaker_embedding = nn.Embedding(cfg.n_speakers, cfg.dim)
        self.language_embedding = nn.Embedding(cfg.n_languages, cfg.dim)

        self.utterance_reference = UtteranceReferenceEncoder(cfg)
        self.phoneme_reference = PhonemeReferenceEncoder(cfg)
        self.utterance_predictor = UtteranceProsodyPredictor(cfg)
        self.phoneme_predictor = PhonemeProsodyPredictor(cfg)
        self.pitch_predictor = VariancePredictor(cfg)
        self.duration_predictor = VariancePredictor(cfg)

        self.utt_proj = nn.Linear(cfg.utt_prosody_dim, cfg.dim)
        self.phoneme_proj = nn.Linear(cfg.phoneme_prosody_dim, cfg.dim)
        self.pitch_proj = nn.Linear(1, cfg.dim)

    def lookup_explicit(self, speaker_ids: torch.Tensor, language_ids: torch.Tensor):
        """Speaker and language embeddings, both (B, dim)."""
        if speaker_ids.min() < 0 or speaker_ids.max() >= self.cfg.n_speakers:
            raise ValueError(
                f"speaker id out of range [0, {self.cfg.n_speakers}): "
                f"{speaker_ids.min().item()}..{speaker_ids.max().item()}"
            )
        if language_ids.min() < 0 or language_ids.max() >= self.cfg.n_languages:
            raise ValueError(
                f"language id out of range [0, {self.cfg.n_languages}): "
                f"{language_ids.min().item()}..{language_ids.max().item()}"
            )
        return self.speaker_embedding(speaker_ids), self.language_embedding(language_ids)

    def fuse_explicit(self, hidden, mask, speaker_ids, language_ids):
        spk, lang = self.lookup_explicit(speaker_ids, language_ids)
        return apply_mask(hidden + spk.unsqueeze(1) + lang.unsqueeze(1), mask)

    def fuse_utterance(self, hidden, mask, utt_vector):
        return apply_mask(hidden + self.utt_proj(utt_vector).unsqueeze(1), mask)

    def fuse_phoneme(self, hidden, mask, phoneme_vectors):
        return apply_mask(hidden + self.phoneme_proj(phoneme_vectors), mask)

    def fuse_pitch(self, hidden, mask, pitch):
        return apply_mask(hidden + self.pitch_proj(pitch.unsqueeze(-1)), mask)
