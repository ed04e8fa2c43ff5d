"""The six-term training objective and its components.

total = l_utt + l_phone + l_pitch + l_dur + l_iter + l_ssim, an
unweighted sum by default. Prosody terms compare predictors against
detached reference-encoder outputs; the duration term lives in the
ln(frames + 1) domain; l_iter sums masked mel L1 over every mel-side
block; l_ssim is 1 - SSIM on the final block only.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F

from .adaptor import log_duration_targets
from .model import AcousticOutputs

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
RANGE_FLOOR = 1e-8


def masked_l1(pred: torch.Tensor, target: torch.Tensor,
              mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean absolute error over valid elements only.

    mask covers the leading dimensions of pred; trailing feature axes are
    always fully counted. mask=None means everything is valid.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    diff = (pred - target).abs()
    if mask is None:
        return diff.mean()
    m = mask.to(pred.dtype)
    while m.ndim < diff.ndim:
        m = m.unsqueeze(-1)
    valid = m.expand_as(diff).sum()
    if valid == 0:
        raise ValueError("masked_l1 over zero valid elements")
    return (diff * m).sum() / valid


def iterative_mel_loss(mel_per_block, target: torch.Tensor,
                       mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Sum (not mean) of masked mel L1 across blocks."""
    if len(mel_per_block) == 0:
        raise ValueError("iterative_mel_loss needs at least one block output")
    total = mel_per_block[0].new_zeros(())
    for mel in mel_per_block:
        total = total + masked_l1(mel, target, mask)
    return total


def _gaussian_window(size_t: int, size_f: int, sigma: float,
                     dtype, device) -> torch.Tensor:
    def gauss(n):
        x = torch.arange(n, dtype=dtype, device=device) - (n - 1) / 2.0
        w = torch.exp(-(x**2) / (2 * sigma**2))
        return w / w.sum()

    win = torch.outer(gauss(size_t), gauss(size_f))
    return (win / win.sum()).view(1, 1, size_t, size_f)


def _ssim_single(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """SSIM of one (T, C) pair already normalized to the unit range."""
    t, c = target.shape
    # Shrink the window on short inputs; sizes stay odd where possible.
    size_t = min(SSIM_WINDOW, t if t % 2 == 1 else t - 1) if t > 1 else 1
    size_f = min(SSIM_WINDOW, c if c % 2 == 1 else c - 1) if c > 1 else 1
    window = _gaussian_window(size_t, size_f, SSIM_SIGMA, pred.dtype, pred.device)

    x = pred.view(1, 1, t, c)
    y = target.view(1, 1, t, c)
    mu_x = F.conv2d(x, window)
    mu_y = F.conv2d(y, window)
    var_x = F.conv2d(x * x, window) - mu_x**2
    var_y = F.conv2d(y * y, window) - mu_y**2
    cov = F.conv2d(x * y, window) - mu_x * mu_y

    ssim_map = ((2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_x**2 + mu_y**2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    )
    return ssim_map.mean()


def ssim(pred: torch.Tensor, target: torch.Tensor,
         mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Masked structural similarity of mel pairs, in [0, 1].

    Accepts (T, C) pairs or (B, T, C) batches with an optional (B, T)
    validity mask. Each utterance is cropped to its valid frames and both
    sides are affinely normalized to [0, 1] by the target's min/max (with
    a range floor for constant targets), then compared with a Gaussian
    11x11 window. The batch value is the mean over items, clamped to
    [0, 1] so 1 - ssim is always a valid loss.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.ndim == 2:
        pred, target = pred.unsqueeze(0), target.unsqueeze(0)
        mask = None if mask is None else mask.unsqueeze(0)

    values = []
    for i in range(pred.shape[0]):
        if mask is not None:
            t_valid = int(mask[i].sum())
            if t_valid == 0:
                raise ValueError("ssim over zero valid frames")
            p, g = pred[i, :t_valid], target[i, :t_valid]
        else:
            p, g = pred[i], target[i]
        lo, hi = g.min(), g.max()
        span = torch.clamp(hi - lo, min=RANGE_FLOOR)
        p = torch.clamp((p - lo) / span, 0.0, 1.0)
        g = torch.clamp((g - lo) / span, 0.0, 1.0)
        values.append(_ssim_single(p, g))
    return torch.clamp(torch.stack(values).mean(), 0.0, 1.0)


@dataclass
class LossBreakdown:
    """Per-term values; total is their exact (optionally weighted) sum."""

    l_utt: torch.Tensor
    l_phone: torch.Tensor
    l_pitch: torch.Tensor
    l_dur: torch.Tensor
    l_iter: torch.Tensor
    l_ssim: torch.Tensor
    total: torch.Tensor

    def to_dict(self) -> dict:
        return {
            "l_utt": float(self.l_utt.detach()),
            "l_phone": float(self.l_phone.detach()),
            "l_pitch": float(self.l_pitch.detach()),
            "l_dur": float(self.l_dur.detach()),
            "l_iter": float(self.l_iter.detach()),
            "l_ssim": float(self.l_ssim.detach()),
            "total": float(self.total.detach()),
        }


DEFAULT_WEIGHTS = {
    "l_utt": 1.0, "l_phone": 1.0, "l_pitch": 1.0,
    "l_dur": 1.0, "l_iter": 1.0, "l_ssim": 1.0,
}


def total_loss(outputs: AcousticOutputs,
               weights: Optional[dict] = None) -> LossBreakdown:
    """Assemble the six-term objective from a training forward pass."""
    w = dict(DEFAULT_WEIGHTS)
    if weights:
        unknown = set(weights) - set(w)
        if unknown:
            raise ValueError(f"unknown loss weights: {sorted(unknown)}")
        w.update(weights)

    ph_mask = outputs.phoneme_mask
    frame_mask = outputs.frame_mask

    l_utt = masked_l1(outputs.pred_utt_prosody, outputs.ref_utt_prosody.detach())
    l_phone = masked_l1(outputs.pred_phoneme_prosody,
                        outputs.ref_phoneme_prosody.detach(), ph_mask)
    l_pitch = masked_l1(outputs.pred_pitch, outputs.pitch_target, ph_mask)
    dur_target = log_duration_targets(outputs.duration_target).to(outputs.pred_logdur.dtype)
    l_dur = masked_l1(outputs.pred_logdur, dur_target, ph_mask)
    l_iter = iterative_mel_loss(outputs.mel_per_block, outputs.mel_target, frame_mask)
    l_ssim = 1.0 - ssim(outputs.final_mel, outputs.mel_target, frame_mask)

    total = (w["l_utt"] * l_utt + w["l_phone"] * l_phone
             + w["l_pitch"] * l_pitch + w["l_dur"] * l_dur
             + w["l_iter"] * l_iter + w["l_ssim"] * l_ssim)
    return LossBreakdown(l_utt=l_utt, l_phone=l_phone, l_pitch=l_pitch,
                         l_dur=l_dur, l_iter=l_iter, l_ssim=l_ssim, total=total)
