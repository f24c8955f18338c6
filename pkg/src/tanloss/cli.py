"""Command-line entry point: gen-synthetic | train | eval | predict | gradcheck.

Exit codes: 0 success, 1 runtime or check failure, 2 usage/config error,
3 data error.  TANLOSS_THREADS caps BLAS worker threads when set before
launch.
"""

import os

_threads = os.environ.get("TANLOSS_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .corpus import (DataError, SyntheticConfig, generate_synthetic_corpus, ingest_jsonl,
                     load_vocab, save_vocab, split_dataset, write_jsonl)
from .evaluation import TOLERANCE_MODES, binarize, evaluate
from .network import CheckpointError, ModelSizes, check_fingerprint, gradient_check, load_checkpoint
from .training import TrainConfig, resume, train, vocabs_from_meta

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_DATA = 3

GRADCHECK_TOLERANCE = 1e-4


class ConfigError(ValueError):
    """Bad config file or invalid flag combination."""


def _threshold(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"threshold must be in (0, 1), got {value}")
    return value


def _sizes(text: str) -> tuple[int, ...]:
    parts = text.split(",")
    if len(parts) != 5:
        raise argparse.ArgumentTypeError("--sizes expects vocab,gru1,gru2,head,labels")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--sizes must be integers, got {text!r}") from None


_CONFIG_TYPES = {f.name: f for f in dataclasses.fields(TrainConfig)
                 if f.name not in ("dataset_path", "vocab_dir", "checkpoint_dir")}


def parse_config_file(path) -> dict:
    """Flat key=value file; '#' starts a comment, blank lines are ignored."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected key=value, got {raw!r}")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in _CONFIG_TYPES:
            raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, value)
        except ValueError:
            raise ConfigError(f"{path}: line {lineno}: bad value {value!r} for {key}") from None
    return values


def _coerce(key: str, value: str):
    target = _CONFIG_TYPES[key].type
    if key == "grad_clip":
        return None if value.lower() in ("none", "off") else float(value)
    if target is bool or target == "bool":
        if value.lower() in ("true", "1", "yes", "on"):
            return True
        if value.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(value)
    if target is int or target == "int":
        return int(value)
    if target is float or target == "float":
        return float(value)
    return value


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tanloss")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-synthetic", help="write a synthetic dataset and vocab files")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--count", type=int, default=1000)
    gen.add_argument("--seed", type=int, default=1)
    gen.add_argument("--text-vocab", type=int, default=60)
    gen.add_argument("--verbs", type=int, default=8)
    gen.add_argument("--states", type=int, default=6)
    gen.add_argument("--min-len", type=int, default=3)
    gen.add_argument("--max-len", type=int, default=8)

    tr = sub.add_parser("train", help="train on a JSONL dataset")
    tr.add_argument("--data", required=True, help="dataset JSONL")
    tr.add_argument("--vocab-dir", required=True,
                    help="directory with text.vocab, verb.vocab, state.vocab")
    tr.add_argument("--ckpt-dir", required=True, help="checkpoint/log output directory")
    tr.add_argument("--config", help="key=value config file")
    tr.add_argument("--resume", help="checkpoint to continue from")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--validate-every", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--gru1", type=int, dest="gru1_hidden")
    tr.add_argument("--gru2", type=int, dest="gru2_hidden")
    tr.add_argument("--head-hidden", type=int)
    tr.add_argument("--split-seed", type=int)
    tr.add_argument("--init-seed", type=int)
    tr.add_argument("--shuffle-seed", type=int)
    tr.add_argument("--val-fraction", type=float, dest="val_fraction")
    tr.add_argument("--keep-all", action="store_true", default=None)
    tr.add_argument("--quiet", action="store_true")

    ev = sub.add_parser("eval", help="report per-head one-missing accuracy")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--threshold", type=_threshold, default=0.5)
    ev.add_argument("--tolerance", choices=TOLERANCE_MODES, default="subset")
    ev.add_argument("--per-sample-csv", help="also write per-sample flags as CSV")

    pr = sub.add_parser("predict", help="predict verb/state sets for stdin sentences")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--threshold", type=_threshold, default=0.5)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--sizes", type=_sizes, default=(10, 5, 4, 7, 3),
                    help="vocab,gru1,gru2,head,labels")
    gc.add_argument("--corrupt-backward", action="store_true", help=argparse.SUPPRESS)
    return parser


def cmd_gen_synthetic(args) -> int:
    out = Path(args.out)
    out.mkdir(exist_ok=True)
    config = SyntheticConfig(count=args.count, text_size=args.text_vocab,
                             verb_count=args.verbs, state_count=args.states,
                             min_len=args.min_len, max_len=args.max_len)
    samples, (text_vocab, verb_vocab, state_vocab) = generate_synthetic_corpus(config, args.seed)
    write_jsonl(samples, out / "samples.jsonl", text_vocab, verb_vocab, state_vocab)
    save_vocab(text_vocab, out / "text.vocab")
    save_vocab(verb_vocab, out / "verb.vocab")
    save_vocab(state_vocab, out / "state.vocab")
    print(f"wrote {len(samples)} samples to {out / 'samples.jsonl'}")
    print(f"vocab sizes: text={len(text_vocab)} verb={len(verb_vocab)} state={len(state_vocab)}")
    return EXIT_OK


def _load_vocab_dir(vocab_dir) -> tuple:
    vocab_dir = Path(vocab_dir)
    return (
        load_vocab(vocab_dir / "text.vocab", with_pad=True),
        load_vocab(vocab_dir / "verb.vocab"),
        load_vocab(vocab_dir / "state.vocab"),
    )


def cmd_train(args) -> int:
    overrides = parse_config_file(args.config) if args.config else {}
    for key in ("epochs", "validate_every", "lr", "batch_size", "gru1_hidden", "gru2_hidden",
                "head_hidden", "split_seed", "init_seed", "shuffle_seed", "val_fraction",
                "keep_all"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    config = TrainConfig(dataset_path=args.data, vocab_dir=args.vocab_dir,
                         checkpoint_dir=args.ckpt_dir, **overrides)

    vocabs = _load_vocab_dir(args.vocab_dir)
    samples = ingest_jsonl(args.data, *vocabs)
    split = split_dataset(samples, config.val_fraction, config.split_seed)
    if not args.quiet:
        print(f"training on {len(split.train)} samples, validating on "
              f"{len(split.validation)}, {config.epochs} epochs", file=sys.stderr)
    if args.resume:
        result = resume(args.resume, config, split, vocabs)
    else:
        result = train(config, split, vocabs)
    validations = [r for r in result.records if r.validation_error is not None]
    best = result.best.best_val_error if result.best else None
    print(json.dumps({
        "epochs_run": len(result.records),
        "validations": len(validations),
        "best_val_error": best,
        "checkpoint": str(Path(args.ckpt_dir) / "ckpt_best.bin") if result.best else None,
    }))
    return EXIT_OK


def _load_eval_ckpt(path):
    ckpt = load_checkpoint(path)
    if ckpt.vocabs is None:
        raise CheckpointError(f"{path} carries no vocabulary metadata")
    vocabs = vocabs_from_meta(ckpt.vocabs)
    sizes = ModelSizes(input_dim=len(vocabs[0]), verb_dim=len(vocabs[1]),
                       state_dim=len(vocabs[2]),
                       gru1_hidden=ckpt.params.gru1.W_z.shape[0],
                       gru2_hidden=ckpt.params.gru2.W_z.shape[0],
                       head_hidden=ckpt.params.verb_head.W1.shape[0])
    check_fingerprint(ckpt.config_fingerprint, sizes.fingerprint())
    return ckpt, vocabs


def cmd_eval(args) -> int:
    ckpt, vocabs = _load_eval_ckpt(args.ckpt)
    text_vocab = vocabs[0]
    samples = ingest_jsonl(args.data, *vocabs)
    report = evaluate(ckpt.params, samples, pad_index=text_vocab.pad_index,
                      threshold=args.threshold, mode=args.tolerance)
    if args.per_sample_csv:
        with open(args.per_sample_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample", "action_ok", "state_ok"])
            for i, (action_ok, state_ok) in enumerate(report.per_sample_flags):
                writer.writerow([i, int(action_ok), int(state_ok)])
    print(json.dumps(report.to_dict()))
    return EXIT_OK


def cmd_predict(args) -> int:
    from .corpus import Sample, pad_batch
    from .network import forward

    ckpt, (text_vocab, verb_vocab, state_vocab) = _load_eval_ckpt(args.ckpt)
    lines = sys.stdin.read().splitlines()
    if not lines:
        print("error: no input on stdin", file=sys.stderr)
        return EXIT_FAILURE
    for line in lines:
        tokens = line.split()
        if not tokens:
            print("error: empty input line", file=sys.stderr)
            return EXIT_FAILURE
        sample = Sample(tokens=[text_vocab.lookup(t) for t in tokens],
                        verb_label=np.zeros(len(verb_vocab)),
                        state_label=np.zeros(len(state_vocab)))
        batch = pad_batch([sample], pad_index=text_vocab.pad_index)
        verb_pred, state_pred, _ = forward(ckpt.params, batch)
        print(json.dumps({
            "tokens": tokens,
            "verbs": sorted(verb_vocab.tokens[i] for i in binarize(verb_pred[0], args.threshold)),
            "states": sorted(state_vocab.tokens[i] for i in binarize(state_pred[0], args.threshold)),
        }))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    vocab, gru1, gru2, head, labels = args.sizes
    sizes = ModelSizes(input_dim=vocab, verb_dim=labels, state_dim=labels,
                       gru1_hidden=gru1, gru2_hidden=gru2, head_hidden=head)
    worst = gradient_check(sizes, seed=args.seed, corrupt_backward=args.corrupt_backward)
    print(f"max relative gradient error: {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})")
    return EXIT_OK if worst < GRADCHECK_TOLERANCE else EXIT_FAILURE


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    handlers = {
        "gen-synthetic": cmd_gen_synthetic,
        "train": cmd_train,
        "eval": cmd_eval,
        "predict": cmd_predict,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CheckpointError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
