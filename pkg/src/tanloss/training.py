"""Training protocol: summed action/state tangent loss, RMSProp updates,
periodic validation by the cross-entropy-gap error, checkpoint on strict
improvement, and exact resume.

Epoch shuffling is reseeded as shuffle_seed + epoch, so a run resumed from a
checkpoint at epoch k replays epochs k+1..N exactly as a straight run would.
"""

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import DataError, DatasetSplit, Vocabulary, make_batches
from .losses import batch_error, tangent_loss, tangent_loss_grad
from .network import (Checkpoint, CheckpointError, ModelParams, ModelSizes, backward,
                      check_fingerprint, forward, init_params, load_checkpoint,
                      save_checkpoint)
from .optim import RmsPropState, rmsprop_step


@dataclass
class TrainConfig:
    epochs: int = 201
    validate_every: int = 2
    lr: float = 1e-4
    batch_size: int = 32
    gru1_hidden: int = 1600
    gru2_hidden: int = 800
    head_hidden: int = 500
    split_seed: int = 0
    init_seed: int = 0
    shuffle_seed: int = 0
    rho: float = 0.9
    eps: float = 1e-8
    batch_reduction: str = "mean"   # "mean" makes lr invariant to batch size
    grad_clip: float | None = None
    keep_all: bool = False
    val_fraction: float = 0.1
    dataset_path: str | None = None
    vocab_dir: str | None = None
    checkpoint_dir: str | None = None

    def sizes_for(self, text_vocab, verb_vocab, state_vocab) -> ModelSizes:
        return ModelSizes(
            input_dim=len(text_vocab), verb_dim=len(verb_vocab), state_dim=len(state_vocab),
            gru1_hidden=self.gru1_hidden, gru2_hidden=self.gru2_hidden,
            head_hidden=self.head_hidden,
        )


@dataclass
class TrainLogRecord:
    epoch: int
    mean_total_loss: float
    validation_error: float | None
    checkpoint_saved: bool
    wall_time_ms: int

    def to_json(self) -> str:
        return json.dumps({
            "epoch": self.epoch,
            "mean_total_loss": self.mean_total_loss,
            "validation_error": self.validation_error,
            "checkpoint_saved": self.checkpoint_saved,
            "wall_time_ms": self.wall_time_ms,
        })


@dataclass
class TrainResult:
    best: Checkpoint | None
    records: list[TrainLogRecord]
    final_params: ModelParams
    final_state: RmsPropState


def total_loss(verb_pred, verb_label, state_pred, state_label) -> float:
    """Action loss plus state loss for one sample."""
    return tangent_loss(verb_label, verb_pred) + tangent_loss(state_label, state_pred)


def validation_error(params: ModelParams, samples, pad_index: int,
                     batch_size: int = 64) -> float:
    """Mean over samples of the two heads' cross-entropy-gap errors."""
    labels, preds = [], []
    for batch in make_batches(samples, batch_size, seed=0, pad_index=pad_index, shuffle=False):
        verb_pred, state_pred, _ = forward(params, batch)
        for r in range(len(batch)):
            labels.append((batch.verb_labels[r], batch.state_labels[r]))
            preds.append((verb_pred[r], state_pred[r]))
    return batch_error(labels, preds)


def _check_config(config: TrainConfig) -> None:
    if config.epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {config.epochs}")
    if config.validate_every < 1:
        raise ValueError(f"validate_every must be >= 1, got {config.validate_every}")
    if config.batch_reduction not in ("mean", "sum"):
        raise ValueError(f"batch_reduction must be 'mean' or 'sum', got {config.batch_reduction}")


def _check_split(split: DatasetSplit) -> None:
    if not split.train or not split.validation:
        raise DataError("train and validation sets must both be nonempty")
    for i, sample in enumerate(split.train):
        if not sample.verb_label.any() or not sample.state_label.any():
            raise DataError(f"training sample {i} has an empty verb or state label")


def _write_with_context(ckpt: Checkpoint, path: Path) -> None:
    try:
        save_checkpoint(ckpt, path)
    except OSError as exc:
        raise RuntimeError(f"failed to write checkpoint {path}: {exc}") from exc


def _vocab_meta(text_vocab, verb_vocab, state_vocab) -> dict:
    return {"text": text_vocab.tokens, "verb": verb_vocab.tokens, "state": state_vocab.tokens}


def vocabs_from_meta(meta: dict) -> tuple[Vocabulary, Vocabulary, Vocabulary]:
    return (
        Vocabulary.from_tokens(meta["text"], with_pad=True),
        Vocabulary.from_tokens(meta["verb"]),
        Vocabulary.from_tokens(meta["state"]),
    )


def _run_epochs(config: TrainConfig, split: DatasetSplit, vocabs, params: ModelParams,
                opt: RmsPropState, start_epoch: int, best_err: float) -> TrainResult:
    text_vocab, verb_vocab, state_vocab = vocabs
    pad_index = text_vocab.pad_index
    sizes = config.sizes_for(text_vocab, verb_vocab, state_vocab)
    seeds = {"split": config.split_seed, "init": config.init_seed,
             "shuffle": config.shuffle_seed}
    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    def snapshot(epoch: int, err: float) -> Checkpoint:
        return Checkpoint(
            params=params.copy(), epoch=epoch, best_val_error=err,
            config_fingerprint=sizes.fingerprint(), seeds=seeds,
            rmsprop={"lr": opt.lr, "rho": opt.rho, "eps": opt.eps,
                     "cache": {k: v.copy() for k, v in opt.cache.items()}},
            vocabs=_vocab_meta(text_vocab, verb_vocab, state_vocab),
        )

    best_ckpt: Checkpoint | None = None
    records: list[TrainLogRecord] = []
    n_train = len(split.train)

    for epoch in range(start_epoch + 1, config.epochs + 1):
        t0 = time.perf_counter()
        loss_sum = 0.0
        for batch in make_batches(split.train, config.batch_size,
                                  seed=config.shuffle_seed + epoch, pad_index=pad_index):
            verb_pred, state_pred, trace = forward(params, batch)
            for r in range(len(batch)):
                loss_sum += total_loss(verb_pred[r], batch.verb_labels[r],
                                       state_pred[r], batch.state_labels[r])
            verb_grad = tangent_loss_grad(batch.verb_labels, verb_pred)
            state_grad = tangent_loss_grad(batch.state_labels, state_pred)
            if config.batch_reduction == "mean":
                verb_grad = verb_grad / len(batch)
                state_grad = state_grad / len(batch)
            grads = backward(params, batch, trace, verb_grad, state_grad)
            rmsprop_step(params, grads, opt, clip=config.grad_clip)

        val_err = None
        saved = False
        if epoch % config.validate_every == 0:
            val_err = validation_error(params, split.validation, pad_index,
                                       batch_size=config.batch_size)
            if val_err < best_err:
                best_err = val_err
                best_ckpt = snapshot(epoch, val_err)
                saved = True
                if ckpt_dir is not None:
                    _write_with_context(best_ckpt, ckpt_dir / "ckpt_best.bin")
        if config.keep_all and ckpt_dir is not None:
            _write_with_context(snapshot(epoch, best_err), ckpt_dir / f"ckpt_epoch_{epoch}.bin")

        records.append(TrainLogRecord(
            epoch=epoch,
            mean_total_loss=loss_sum / n_train,
            validation_error=val_err,
            checkpoint_saved=saved,
            wall_time_ms=int(round((time.perf_counter() - t0) * 1000)),
        ))

    if ckpt_dir is not None:
        with (ckpt_dir / "train_log.jsonl").open("a", encoding="utf-8") as fh:
            for record in records:
                fh.write(record.to_json() + "\n")
    return TrainResult(best=best_ckpt, records=records, final_params=params, final_state=opt)


def train(config: TrainConfig, split: DatasetSplit, vocabs) -> TrainResult:
    """Run the full protocol from a fresh initialization.

    Validation happens at epochs divisible by ``validate_every``; a
    checkpoint is saved only when the validation error is strictly lower
    than the best seen so far.
    """
    _check_config(config)
    _check_split(split)
    text_vocab, verb_vocab, state_vocab = vocabs
    sizes = config.sizes_for(text_vocab, verb_vocab, state_vocab)
    params = init_params(sizes, config.init_seed)
    opt = RmsPropState.fresh(params, lr=config.lr, rho=config.rho, eps=config.eps)
    return _run_epochs(config, split, vocabs, params, opt, start_epoch=0, best_err=np.inf)


def resume(checkpoint_path, config: TrainConfig, split: DatasetSplit, vocabs) -> TrainResult:
    """Continue training from a stored checkpoint up to config.epochs.

    The checkpoint's layout fingerprint must match the configured layer
    sizes; optimizer hyperparameters and state come from the checkpoint so
    the continuation is exact.  Resuming with config.epochs equal to the
    stored epoch runs nothing and leaves parameters untouched.
    """
    _check_config(config)
    _check_split(split)
    ckpt = load_checkpoint(checkpoint_path)
    sizes = config.sizes_for(*vocabs)
    check_fingerprint(ckpt.config_fingerprint, sizes.fingerprint())
    if ckpt.rmsprop is None:
        raise CheckpointError(f"{checkpoint_path} carries no optimizer state; cannot resume")
    opt = RmsPropState(cache=ckpt.rmsprop["cache"], lr=ckpt.rmsprop["lr"],
                       rho=ckpt.rmsprop["rho"], eps=ckpt.rmsprop["eps"])
    return _run_epochs(config, split, vocabs, ckpt.params, opt,
                       start_epoch=ckpt.epoch, best_err=ckpt.best_val_error)
