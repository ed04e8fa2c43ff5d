import numpy as np
import pytest
import torch

from melformer.config import toy_config
from melformer.features.dataset import PhonemeUtterance, prepare_dataset
from melformer.model import AcousticModel, collate
from melformer.synthetic import SyntheticCorpusSpec, make_synthetic_corpus


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Synthetic corpus plus prepared feature cache, shared by the session."""
    root = tmp_path_factory.mktemp("corpus")
    spec = SyntheticCorpusSpec(num_utterances=8, seed=0)
    manifest = make_synthetic_corpus(spec, root / "data")
    meta = prepare_dataset(manifest, root / "cache")
    return {
        "root": root,
        "manifest": manifest,
        "cache_dir": root / "cache",
        "meta": meta,
        "spec": spec,
    }


def make_item(rng, utt_id, n_phonemes, vocab_size=16, n_speakers=2,
              n_languages=2, frames_per_phoneme=None):
    """Random feature item with consistent durations and mel length."""
    if frames_per_phoneme is None:
        durations = rng.integers(1, 5, size=n_phonemes)
    else:
        durations = np.full(n_phonemes, frames_per_phoneme)
    durations = durations.astype(np.int64)
    t = int(durations.sum())
    return PhonemeUtterance(
        utt_id=utt_id,
        phoneme_ids=rng.integers(0, vocab_size, size=n_phonemes).astype(np.int64),
        speaker_id=int(rng.integers(0, n_speakers)),
        language_id=int(rng.integers(0, n_languages)),
        mel=rng.normal(size=(t, 80)),
        durations=durations,
        pitch=rng.normal(size=n_phonemes),
    )


@pytest.fixture
def toy_model():
    torch.manual_seed(0)
    cfg = toy_config(vocab_size=16, n_speakers=2, n_languages=2)
    return AcousticModel(cfg)


@pytest.fixture
def tiny_batch():
    rng = np.random.default_rng(1)
    items = [make_item(rng, "a", 4), make_item(rng, "b", 6)]
    return collate(items)


def fd_gradient_check(loss_fn, named_params, n_checks=20, h=1e-6,
                      rtol=1e-3, seed=0):
    """Compare autograd against central finite differences (float64).

    Randomly samples n_checks parameter entries whose analytic gradient
    sits above the finite-difference noise floor (entries smaller than
    ~1e-5 of the gradient scale cannot be measured to rtol by FD). An
    entry that misses rtol is re-measured at h/10: a differentiable point
    converges, while a genuine gradient bug stays put.
    """
    named_params = [(n, p) for n, p in named_params if p.requires_grad]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [p for _, p in named_params],
                                allow_unused=True)
    entries = []
    scale = 0.0
    for (name, p), g in zip(named_params, grads):
        if g is None:
            continue
        scale = max(scale, float(g.abs().max()))
        entries.append((name, p, g))
    assert scale > 0, "no parameter receives gradient"
    floor = max(1e-8, 1e-5 * scale)

    rng = np.random.default_rng(seed)
    checked = 0
    attempts = 0
    while checked < n_checks:
        attempts += 1
        assert attempts < 100 * n_checks, "too few measurable gradient entries"
        name, p, g = entries[rng.integers(len(entries))]
        idx = tuple(rng.integers(s) for s in p.shape)
        analytic = float(g[idx])
        if abs(analytic) < floor:
            continue

        def measure(step):
            with torch.no_grad():
                orig = float(p[idx])
                p[idx] = orig + step
                up = float(loss_fn())
                p[idx] = orig - step
                down = float(loss_fn())
                p[idx] = orig
            fd = (up - down) / (2 * step)
            return fd, abs(fd - analytic) / max(abs(fd), abs(analytic))

        fd, rel = measure(h)
        if rel >= rtol:
            fd, rel = measure(h / 10)
        assert rel < rtol, (
            f"{name}[{idx}]: finite-difference {fd} vs analytic {analytic} "
            f"(rel {rel:.2e})"
        )
        checked += 1
    return checked
