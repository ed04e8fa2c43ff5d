"""Conformer blocks with convolutional feed-forwards and relative attention.

Block layout: convolutional feed-forward (half-step residual), depthwise
convolution module, relative-position self-attention, a second
convolutional feed-forward, then a final layer norm. All activations are
ReLU. Sequences are batch-first (B, T, D) with a boolean validity mask
(B, T); masked positions are exactly zero after every module.
"""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def apply_mask(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return x * mask.unsqueeze(-1).to(x.dtype)


def lengths_to_mask(lengths: torch.Tensor, max_len: int = None) -> torch.Tensor:
    """(B,) lengths -> (B, T) bool mask, True at valid positions."""
    if max_len is None:
        max_len = int(lengths.max().item())
    steps = torch.arange(max_len, device=lengths.device)
    return steps.unsqueeze(0) < lengths.unsqueeze(1)


class ConvFeedForward(nn.Module):
    """Feed-forward with 1-D convolutions in place of the linear layers.

    Half-step (0.5) residual, Macaron style.
    """

    def __init__(self, dim: int, hidden: int, kernel: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.conv1 = nn.Conv1d(dim, hidden, kernel, padding=kernel // 2)
        self.conv2 = nn.Conv1d(hidden, dim, kernel, padding=kernel // 2)
        self.activation = nn.ReLU()
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        y = apply_mask(self.norm(x), mask)
        y = y.transpose(1, 2)
        y = self.activation(self.conv1(y))
        # Zero padded positions so the second kernel sees the same zeros a
        # solo (unpadded) input would.
        y = self.conv2(y * mask.unsqueeze(1).to(y.dtype))
        y = self.dropout(y.transpose(1, 2))
        return apply_mask(x + 0.5 * y, mask)


class DepthwiseConvModule(nn.Module):
    """Pointwise-GLU, depthwise convolution, layer norm, ReLU, pointwise."""

    def __init__(self, dim: int, kernel: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.pointwise_in = nn.Conv1d(dim, 2 * dim, 1)
        self.depthwise = nn.Conv1d(dim, dim, kernel, padding=kernel // 2, groups=dim)
        self.conv_norm = nn.LayerNorm(dim)
        self.activation = nn.ReLU()
        self.pointwise_out = nn.Conv1d(dim, dim, 1)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        y = apply_mask(self.norm(x), mask)
        y = y.transpose(1, 2)
        y = F.glu(self.pointwise_in(y), dim=1)
        ch_mask = mask.unsqueeze(1).to(y.dtype)
        y = self.depthwise(y * ch_mask) * ch_mask
        y = self.conv_norm(y.transpose(1, 2)).transpose(1, 2)
        y = self.pointwise_out(self.activation(y))
        y = self.dropout(y.transpose(1, 2))
        return apply_mask(x + y, mask)


def relative_sinusoid(offsets: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal encoding of (possibly negative) relative offsets."""
    inv_freq = torch.exp(
        torch.arange(0, dim, 2, dtype=torch.float64, device=offsets.device)
        * (-math.log(10000.0) / dim)
    )
    angles = offsets.to(torch.float64).unsqueeze(-1) * inv_freq
    enc = torch.zeros(len(offsets), dim, dtype=torch.float64, device=offsets.device)
    enc[:, 0::2] = torch.sin(angles)
    enc[:, 1::2] = torch.cos(angles)
    return enc


class RelativeSelfAttention(nn.Module):
    """Multi-head self-attention with relative sinusoidal positions.

    Pre-softmax logits depend on content(i), content(j), and the offset
    i - j only, via the two learned global biases (u for content-content,
    v for content-position). Offsets are clipped to +/- pos_clip.
    """

    def __init__(self, dim: int, heads: int, dropout: float, pos_clip: int = 1024):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.pos_clip = pos_clip

        self.norm = nn.LayerNorm(dim)
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.pos_proj = nn.Linear(dim, dim, bias=False)
        self.out_proj = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout)

        self.bias_u = nn.Parameter(torch.zeros(heads, self.head_dim))
        self.bias_v = nn.Parameter(torch.zeros(heads, self.head_dim))
        nn.init.xavier_uniform_(self.bias_u)
        nn.init.xavier_uniform_(self.bias_v)

    def _scores(self, q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
        b, t = q.shape[0], q.shape[1]
        reach = min(t - 1, self.pos_clip)
        offsets = torch.arange(-reach, reach + 1, device=q.device)
        pos = relative_sinusoid(offsets, self.dim).to(q.dtype)
        p = self.pos_proj(pos).view(-1, self.heads, self.head_dim)

        content = torch.einsum("bihd,bjhd->bhij", q + self.bias_u, k)
        pos_scores = torch.einsum("bihd,lhd->bhil", q + self.bias_v, p)
        rel = torch.arange(t, device=q.device).unsqueeze(1) - torch.arange(
            t, device=q.device
        ).unsqueeze(0)
        idx = rel.clamp(-reach, reach) + reach
        idx = idx.view(1, 1, t, t).expand(b, self.heads, t, t)
        position = pos_scores.gather(-1, idx)
        return (content + position) / math.sqrt(self.head_dim)

    def logits(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Pre-softmax attention logits (B, heads, T, T) before key masking."""
        b, t, _ = x.shape
        y = apply_mask(self.norm(x), mask)
        q = self.q_proj(y).view(b, t, self.heads, self.head_dim)
        k = self.k_proj(y).view(b, t, self.heads, self.head_dim)
        return self._scores(q, k)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        y = apply_mask(self.norm(x), mask)
        q = self.q_proj(y).view(b, t, self.heads, self.head_dim)
        k = self.k_proj(y).view(b, t, self.heads, self.head_dim)
        v = self.v_proj(y).view(b, t, self.heads, self.head_dim)

        scores = self._scores(q, k)
        key_mask = mask.unsqueeze(1).unsqueeze(2)
        scores = scores.masked_fill(~key_mask, torch.finfo(scores.dtype).min)
        weights = torch.softmax(scores, dim=-1)
        # Re-zero so fully masked rows attend to nothing instead of NaN.
        weights = weights.masked_fill(~key_mask, 0.0)
        weights = self.dropout(weights)

        out = torch.einsum("bhij,bjhd->bihd", weights, v).reshape(b, t, self.dim)
        out = self.dropout(self.out_proj(out))
        return apply_mask(x + out, mask)


class ConformerBlock(nn.Module):
    """Feed-forward, depthwise conv, self-attention, feed-forward, norm."""

    def __init__(self, dim: int, ff_hidden: int, ff_kernel: int,
                 dw_kernel: int, heads: int, dropout: float,
                 pos_clip: int = 1024):
        super().__init__()
        self.ff1 = ConvFeedForward(dim, ff_hidden, ff_kernel, dropout)
        self.conv_module = DepthwiseConvModule(dim, dw_kernel, dropout)
        self.attention = RelativeSelfAttention(dim, heads, dropout, pos_clip)
        self.ff2 = ConvFeedForward(dim, ff_hidden, ff_kernel, dropout)
        self.final_norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self.ff1(x, mask)
        x = self.conv_module(x, mask)
        x = self.attention(x, mask)
        x = self.ff2(x, mask)
        return apply_mask(self.final_norm(x), mask)


class ConformerStack(nn.Module):
    """A stack of blocks; forward returns every block's output."""

    def __init__(self, num_blocks: int, dim: int, ff_hidden: int,
                 ff_kernel: int, dw_kernel: int, heads: int, dropout: float,
                 pos_clip: int = 1024):
        super().__init__()
        self.blocks = nn.ModuleList(
            ConformerBlock(dim, ff_hidden, ff_kernel, dw_kernel, heads,
                           dropout, pos_clip)
            for _ in range(num_blocks)
        )

    def forward(self, x: torch.Tensor, mask: torch.Tensor):
        x = apply_mask(x, mask)
        per_block = []
        for block in self.blocks:
            x = block(x, mask)
            per_block.append(x)
        return x, per_block
