"""Command-line interface.

Subcommands: prepare-data, make-synthetic, train, synthesize, eval-props.
Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .config import TrainConfig
from .features.dataset import DataError, prepare_dataset
from .synthetic import SyntheticCorpusSpec, make_synthetic_corpus
from .train import TrainingDiverged, run_training, synthesize

CACHE_ENV = "MELFORMER_CACHE_DIR"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


def _default_cache() -> str:
    return os.environ.get(CACHE_ENV, "feature_cache")


def _apply_override(config: dict, spec: str) -> None:
    if "=" not in spec:
        raise UsageError(f"override {spec!r} must look like key=value")
    key, raw = spec.split("=", 1)
    value = yaml.safe_load(raw)
    target = config
    parts = key.split(".")
    for part in parts[:-1]:
        target = target.setdefault(part, {})
        if not isinstance(target, dict):
            raise UsageError(f"override {key!r} descends into a non-mapping")
    target[parts[-1]] = value


def _load_train_config(path, overrides) -> TrainConfig:
    config = {}
    if path:
        loaded = yaml.safe_load(Path(path).read_text())
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise UsageError(f"{path}: train config must be a mapping")
        config.update(loaded)
    for spec in overrides:
        _apply_override(config, spec)
    return TrainConfig.from_dict(config)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="melformer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="extract and cache mel/pitch features")
    p.add_argument("--manifest", action="append", required=True,
                   help="manifest file; repeat to share pitch stats across corpora")
    p.add_argument("--cache-dir", default=None,
                   help=f"feature cache directory (default ${CACHE_ENV} or ./feature_cache)")

    p = sub.add_parser("make-synthetic", help="generate the deterministic synthetic corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--num-utterances", type=int, default=8)
    p.add_argument("--vocab-size", type=int, default=16)
    p.add_argument("--speakers", type=int, default=2)
    p.add_argument("--languages", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="run the optimization loop")
    p.add_argument("--config", default=None, help="YAML train config")
    p.add_argument("--override", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config entry (dotted keys ok)")

    p = sub.add_parser("synthesize", help="phonemes -> mel (and optional waveform)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--phonemes", required=True,
                   help="text file of whitespace-separated phoneme tokens")
    p.add_argument("--speaker", type=int, default=0)
    p.add_argument("--language", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--name", default="synth")
    p.add_argument("--wav", action="store_true", help="also render audio")
    p.add_argument("--vocoder", default="baseline")

    p = sub.add_parser("eval-props", help="teacher-forced eval plus property checks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache-dir", default=None)
    return parser


def _cmd_prepare_data(args) -> int:
    cache_dir = args.cache_dir or _default_cache()
    stats = None
    meta = None
    for manifest in args.manifest:
        meta = prepare_dataset(manifest, cache_dir, pitch_stats=stats)
        stats = (meta["pitch_mean"], meta["pitch_std"])
    print(json.dumps({"cache_dir": str(cache_dir), **meta}))
    return EXIT_OK


def _cmd_make_synthetic(args) -> int:
    spec = SyntheticCorpusSpec(
        num_utterances=args.num_utterances,
        vocab_size=args.vocab_size,
        num_speakers=args.speakers,
        num_languages=args.languages,
        seed=args.seed,
    )
    manifest = make_synthetic_corpus(spec, args.out_dir)
    print(json.dumps({"manifest": str(manifest)}))
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _load_train_config(args.config, args.override)
    if cfg.cache_dir is None:
        cfg.cache_dir = _default_cache()
    final = run_training(cfg)
    print(json.dumps({"checkpoint": str(final)}))
    return EXIT_OK


def _cmd_synthesize(args) -> int:
    text = Path(args.phonemes).read_text()
    tokens = text.split()
    if not tokens:
        raise UsageError(f"{args.phonemes}: empty phoneme file")
    mel_path, wav_path = synthesize(
        args.checkpoint, tokens, args.speaker, args.language,
        args.out_dir, name=args.name,
        vocoder_name=args.vocoder if args.wav else None,
    )
    print(json.dumps({"mel": str(mel_path),
                      "wav": str(wav_path) if wav_path else None}))
    return EXIT_OK


def _cmd_eval_props(args) -> int:
    import torch

    from .checkpoint import load_checkpoint, model_from_checkpoint
    from .features.dataset import load_utterances
    from .train import Trainer

    cache_dir = args.cache_dir or _default_cache()
    payload = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(payload)
    model.eval()
    vocab = payload["vocab"]
    items = load_utterances(args.manifest, cache_dir, vocab)

    trainer = Trainer(model, TrainConfig(), Path(args.checkpoint).parent,
                      vocab, payload["pitch_stats"])
    metrics = trainer.evaluate(items)

    # Determinism: same phonemes, same checkpoint, identical mel.
    sample = items[0]
    with torch.no_grad():
        a = model.forward_infer(sample.phoneme_ids, sample.speaker_id, sample.language_id)
        b = model.forward_infer(sample.phoneme_ids, sample.speaker_id, sample.language_id)
    deterministic = bool(torch.equal(a, b))

    # Length law: regulated frames equal the duration sum.
    with torch.no_grad():
        mel = model.forward_infer(sample.phoneme_ids, sample.speaker_id,
                                  sample.language_id,
                                  durations=np.asarray(sample.durations))
    length_ok = mel.shape[0] == int(np.sum(sample.durations))

    report = {
        "metrics": metrics,
        "deterministic_inference": deterministic,
        "length_regulation_exact": length_ok,
        "parameters": model.count_parameters(),
    }
    print(json.dumps(report, indent=2))
    ok = deterministic and length_ok and np.isfinite(metrics["total"])
    return EXIT_OK if ok else EXIT_NUMERIC


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "prepare-data": _cmd_prepare_data,
        "make-synthetic": _cmd_make_synthetic,
        "train": _cmd_train,
        "synthesize": _cmd_synthesize,
        "eval-props": _cmd_eval_props,
    }
    try:
        return handlers[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
