"""Frame-budget batch planning.

Greedy length-bucketed packing: utterances are sorted by frame count so
batches hold similar lengths (minimal padding), filled up to the frame
budget, and the resulting batches are shuffled deterministically. Every
utterance appears exactly once per epoch.
"""
from __future__ import annotations

import numpy as np

from .features.dataset import DataError


def build_batches(entries, frame_budget: int, seed: int) -> list:
    """Plan one epoch of batches.

    entries: iterable of (utt_id, n_frames) pairs.
    Returns a list of batches, each a list of utt_ids.
    """
    pairs = list(entries)
    if not pairs:
        raise DataError("cannot build batches from an empty utterance list")
    for utt_id, frames in pairs:
        if frames > frame_budget:
            raise DataError(
                f"utterance {utt_id!r} has {frames} frames, over the "
                f"{frame_budget}-frame budget"
            )

    pairs.sort(key=lambda p: (-p[1], p[0]))
    batches, current, used = [], [], 0
    for utt_id, frames in pairs:
        if current and used + frames > frame_budget:
            batches.append(current)
            current, used = [], 0
        current.append(utt_id)
        used += frames
    if current:
        batches.append(current)

    order = np.random.default_rng(seed).permutation(len(batches))
    return [batches[i] for i in order]
