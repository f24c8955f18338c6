"""Two stacked GRU layers over one-hot input, two MLP decoder heads, and
hand-written reverse-mode gradients.

Conventions fixed here and relied on by the test suite:
  * GRU update: z = sig(W_z x + U_z h + b_z), r = sig(W_r x + U_r h + b_r),
    hc = tanh(W_h x + U_h (r*h) + b_h), h' = (1-z)*h + z*hc.
  * Heads: sigmoid(W2 @ relu(W1 @ h + b1) + b2), so outputs live in (0, 1)
    and match the loss domain.
  * Sequences are unrolled for exactly their true length; padded steps leave
    the hidden state untouched bit for bit, so outputs cannot depend on
    padding.
  * The one-hot input is never materialized: input-to-hidden products select
    a column of W, and their gradients scatter into the same columns.

Everything is float64 so finite-difference gradient checks are meaningful.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .losses import tangent_loss, tangent_loss_grad

CKPT_MAGIC = b"TANL"
CKPT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable checkpoint file or layout mismatch with the current config."""


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class ModelSizes:
    """Layer sizes; defaults follow the full-scale training setup."""

    input_dim: int
    verb_dim: int
    state_dim: int
    gru1_hidden: int = 1600
    gru2_hidden: int = 800
    head_hidden: int = 500

    def fingerprint(self) -> str:
        return (
            f"in{self.input_dim}-gru{self.gru1_hidden}x{self.gru2_hidden}"
            f"-head{self.head_hidden}-v{self.verb_dim}-s{self.state_dim}"
        )


@dataclass
class GruLayerParams:
    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray


@dataclass
class MlpHeadParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


@dataclass
class ModelParams:
    gru1: GruLayerParams
    gru2: GruLayerParams
    verb_head: MlpHeadParams
    state_head: MlpHeadParams

    def flat(self) -> dict[str, np.ndarray]:
        """Ordered name -> array view of every parameter."""
        out: dict[str, np.ndarray] = {}
        for prefix, layer in (("gru1", self.gru1), ("gru2", self.gru2)):
            for name in ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h"):
                out[f"{prefix}.{name}"] = getattr(layer, name)
        for prefix, head in (("verb_head", self.verb_head), ("state_head", self.state_head)):
            for name in ("W1", "b1", "W2", "b2"):
                out[f"{prefix}.{name}"] = getattr(head, name)
        return out

    def sizes(self) -> ModelSizes:
        return ModelSizes(
            input_dim=self.gru1.W_z.shape[1],
            verb_dim=self.verb_head.W2.shape[0],
            state_dim=self.state_head.W2.shape[0],
            gru1_hidden=self.gru1.W_z.shape[0],
            gru2_hidden=self.gru2.W_z.shape[0],
            head_hidden=self.verb_head.W1.shape[0],
        )

    def copy(self) -> "ModelParams":
        return params_from_flat({k: v.copy() for k, v in self.flat().items()})


def params_from_flat(arrays: dict[str, np.ndarray]) -> ModelParams:
    def layer(prefix):
        return GruLayerParams(**{n: arrays[f"{prefix}.{n}"] for n in
                                 ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")})

    def head(prefix):
        return MlpHeadParams(**{n: arrays[f"{prefix}.{n}"] for n in ("W1", "b1", "W2", "b2")})

    return ModelParams(gru1=layer("gru1"), gru2=layer("gru2"),
                       verb_head=head("verb_head"), state_head=head("state_head"))


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.flat().items()}


def init_params(sizes: ModelSizes, seed: int) -> ModelParams:
    """Uniform(-s, s) weights with s = sqrt(6 / (fan_in + fan_out)); zero biases."""
    for field, value in vars(sizes).items():
        if value <= 0:
            raise ValueError(f"size {field} must be positive, got {value}")
    rng = np.random.default_rng(seed)

    def mat(rows, cols):
        limit = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-limit, limit, size=(rows, cols))

    def gru_layer(hidden, inp):
        return GruLayerParams(
            W_z=mat(hidden, inp), W_r=mat(hidden, inp), W_h=mat(hidden, inp),
            U_z=mat(hidden, hidden), U_r=mat(hidden, hidden), U_h=mat(hidden, hidden),
            b_z=np.zeros(hidden), b_r=np.zeros(hidden), b_h=np.zeros(hidden),
        )

    def mlp_head(out_dim, inp):
        return MlpHeadParams(
            W1=mat(sizes.head_hidden, inp), b1=np.zeros(sizes.head_hidden),
            W2=mat(out_dim, sizes.head_hidden), b2=np.zeros(out_dim),
        )

    return ModelParams(
        gru1=gru_layer(sizes.gru1_hidden, sizes.input_dim),
        gru2=gru_layer(sizes.gru2_hidden, sizes.gru1_hidden),
        verb_head=mlp_head(sizes.verb_dim, sizes.gru2_hidden),
        state_head=mlp_head(sizes.state_dim, sizes.gru2_hidden),
    )


def gru_step(params: GruLayerParams, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """One GRU step on plain vectors; h' = (1-z)*h + z*hc."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.shape[-1] != params.W_z.shape[1] or h.shape[-1] != params.U_z.shape[1]:
        raise ValueError(
            f"shape mismatch: x {x.shape} vs W {params.W_z.shape}, h {h.shape} vs U {params.U_z.shape}"
        )
    z = _sigmoid(params.W_z @ x + params.U_z @ h + params.b_z)
    r = _sigmoid(params.W_r @ x + params.U_r @ h + params.b_r)
    hc = np.tanh(params.W_h @ x + params.U_h @ (r * h) + params.b_h)
    return (1.0 - z) * h + z * hc


@dataclass
class ForwardTrace:
    """Per-step activations needed for backpropagation through time.

    Arrays are padded to the batch maximum length; entries at or beyond a
    row's true length are frozen copies that carry no gradient, so the
    effective trace of each sample is exactly its true length.
    """

    token_matrix: np.ndarray
    lengths: np.ndarray
    h1_seq: list          # T+1 arrays (B, n1); h1_seq[0] is the zero state
    h2_seq: list          # T+1 arrays (B, n2)
    z1: list
    r1: list
    hc1: list
    z2: list
    r2: list
    hc2: list
    verb_head: tuple      # (a_pre, a, out)
    state_head: tuple


def _head_forward(head: MlpHeadParams, h: np.ndarray):
    a_pre = h @ head.W1.T + head.b1
    a = np.maximum(a_pre, 0.0)
    out = _sigmoid(a @ head.W2.T + head.b2)
    return a_pre, a, out


def forward(params: ModelParams, batch):
    """Run both GRU layers over each row's true length and decode the final
    layer-2 state with both heads.

    Returns (verb_pred, state_pred, trace) with predictions in (0, 1).
    """
    tokens = batch.token_matrix
    lengths = np.asarray(batch.lengths)
    B, T = tokens.shape
    if np.any(lengths < 1):
        raise ValueError("every sample must have length >= 1")
    input_dim = params.gru1.W_z.shape[1]
    if tokens.min() < 0 or tokens.max() >= input_dim:
        raise ValueError(
            f"token index out of range: [{tokens.min()}, {tokens.max()}] vs input dim {input_dim}"
        )

    g1, g2 = params.gru1, params.gru2
    n1, n2 = g1.W_z.shape[0], g2.W_z.shape[0]
    h1 = np.zeros((B, n1))
    h2 = np.zeros((B, n2))
    trace = ForwardTrace(tokens, lengths, [h1], [h2], [], [], [], [], [], [], (), ())

    for t in range(T):
        idx = tokens[:, t]
        live = (t < lengths)[:, None].astype(np.float64)
        # One-hot input: select columns of W; padded rows get the zero vector.
        xz = g1.W_z.T[idx] * live
        xr = g1.W_r.T[idx] * live
        xh = g1.W_h.T[idx] * live
        z1 = _sigmoid(xz + h1 @ g1.U_z.T + g1.b_z)
        r1 = _sigmoid(xr + h1 @ g1.U_r.T + g1.b_r)
        hc1 = np.tanh(xh + (r1 * h1) @ g1.U_h.T + g1.b_h)
        h1 = np.where(live > 0, (1.0 - z1) * h1 + z1 * hc1, h1)

        x2 = h1
        z2 = _sigmoid(x2 @ g2.W_z.T + h2 @ g2.U_z.T + g2.b_z)
        r2 = _sigmoid(x2 @ g2.W_r.T + h2 @ g2.U_r.T + g2.b_r)
        hc2 = np.tanh(x2 @ g2.W_h.T + (r2 * h2) @ g2.U_h.T + g2.b_h)
        h2 = np.where(live > 0, (1.0 - z2) * h2 + z2 * hc2, h2)

        trace.h1_seq.append(h1)
        trace.h2_seq.append(h2)
        trace.z1.append(z1)
        trace.r1.append(r1)
        trace.hc1.append(hc1)
        trace.z2.append(z2)
        trace.r2.append(r2)
        trace.hc2.append(hc2)

    trace.verb_head = _head_forward(params.verb_head, h2)
    trace.state_head = _head_forward(params.state_head, h2)
    return trace.verb_head[2], trace.state_head[2], trace


def _head_backward(head: MlpHeadParams, h_final, head_trace, out_grad, grads, prefix):
    a_pre, a, out = head_trace
    d_opre = out_grad * out * (1.0 - out)
    grads[f"{prefix}.W2"] += d_opre.T @ a
    grads[f"{prefix}.b2"] += d_opre.sum(axis=0)
    d_a = (d_opre @ head.W2) * (a_pre > 0)
    grads[f"{prefix}.W1"] += d_a.T @ h_final
    grads[f"{prefix}.b1"] += d_a.sum(axis=0)
    return d_a @ head.W1


def backward(params: ModelParams, batch, trace: ForwardTrace,
             verb_out_grad: np.ndarray, state_out_grad: np.ndarray) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients of the batch-summed loss with respect to
    every parameter, given dLoss/dOutput for each head."""
    if trace.token_matrix is not batch.token_matrix and not np.array_equal(
        trace.token_matrix, batch.token_matrix
    ):
        raise ValueError("trace does not belong to this batch")
    tokens = batch.token_matrix
    lengths = np.asarray(batch.lengths)
    B, T = tokens.shape
    g1, g2 = params.gru1, params.gru2
    grads = zero_grads(params)
    # Input-side scatter targets, transposed so rows index the vocabulary.
    gW1_T = {k: np.zeros((g1.W_z.shape[1], g1.W_z.shape[0])) for k in ("W_z", "W_r", "W_h")}

    h_final = trace.h2_seq[-1]
    dh2 = _head_backward(params.verb_head, h_final, trace.verb_head,
                         np.asarray(verb_out_grad, dtype=np.float64), grads, "verb_head")
    dh2 += _head_backward(params.state_head, h_final, trace.state_head,
                          np.asarray(state_out_grad, dtype=np.float64), grads, "state_head")
    dh1 = np.zeros_like(trace.h1_seq[0])

    for t in range(T - 1, -1, -1):
        live = (t < lengths)[:, None].astype(np.float64)
        idx = tokens[:, t]

        # Layer 2: x2 is the layer-1 state at this step.
        x2 = trace.h1_seq[t + 1]
        h2_prev = trace.h2_seq[t]
        z2, r2, hc2 = trace.z2[t], trace.r2[t], trace.hc2[t]
        d_z2pre = dh2 * (hc2 - h2_prev) * z2 * (1.0 - z2) * live
        d_hc2pre = dh2 * z2 * (1.0 - hc2 * hc2) * live
        d_rh2 = d_hc2pre @ g2.U_h
        d_r2pre = d_rh2 * h2_prev * r2 * (1.0 - r2) * live
        grads["gru2.W_z"] += d_z2pre.T @ x2
        grads["gru2.W_r"] += d_r2pre.T @ x2
        grads["gru2.W_h"] += d_hc2pre.T @ x2
        grads["gru2.U_z"] += d_z2pre.T @ h2_prev
        grads["gru2.U_r"] += d_r2pre.T @ h2_prev
        grads["gru2.U_h"] += d_hc2pre.T @ (r2 * h2_prev)
        grads["gru2.b_z"] += d_z2pre.sum(axis=0)
        grads["gru2.b_r"] += d_r2pre.sum(axis=0)
        grads["gru2.b_h"] += d_hc2pre.sum(axis=0)
        dx2 = d_z2pre @ g2.W_z + d_r2pre @ g2.W_r + d_hc2pre @ g2.W_h
        dh2 = np.where(
            live > 0,
            dh2 * (1.0 - z2) + d_rh2 * r2 + d_z2pre @ g2.U_z + d_r2pre @ g2.U_r,
            dh2,
        )

        # Layer 1: gradient arrives both through its own recurrence and
        # through layer 2's input at this step.
        dh1 = dh1 + dx2
        h1_prev = trace.h1_seq[t]
        z1, r1, hc1 = trace.z1[t], trace.r1[t], trace.hc1[t]
        d_z1pre = dh1 * (hc1 - h1_prev) * z1 * (1.0 - z1) * live
        d_hc1pre = dh1 * z1 * (1.0 - hc1 * hc1) * live
        d_rh1 = d_hc1pre @ g1.U_h
        d_r1pre = d_rh1 * h1_prev * r1 * (1.0 - r1) * live
        np.add.at(gW1_T["W_z"], idx, d_z1pre)
        np.add.at(gW1_T["W_r"], idx, d_r1pre)
        np.add.at(gW1_T["W_h"], idx, d_hc1pre)
        grads["gru1.U_z"] += d_z1pre.T @ h1_prev
        grads["gru1.U_r"] += d_r1pre.T @ h1_prev
        grads["gru1.U_h"] += d_hc1pre.T @ (r1 * h1_prev)
        grads["gru1.b_z"] += d_z1pre.sum(axis=0)
        grads["gru1.b_r"] += d_r1pre.sum(axis=0)
        grads["gru1.b_h"] += d_hc1pre.sum(axis=0)
        dh1 = np.where(
            live > 0,
            dh1 * (1.0 - z1) + d_rh1 * r1 + d_z1pre @ g1.U_z + d_r1pre @ g1.U_r,
            dh1,
        )

    for key, acc in gW1_T.items():
        grads[f"gru1.{key}"] += acc.T
    return grads


# ---------------------------------------------------------------------------
# Checkpointing: magic "TANL", u32 version, JSON metadata block, then a
# named-array table of raw little-endian float64 data for a bit-exact round
# trip.
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    params: ModelParams
    epoch: int
    best_val_error: float
    config_fingerprint: str
    seeds: dict
    rmsprop: dict | None = None     # {"lr", "rho", "eps", "cache": {name: array}}
    vocabs: dict | None = None      # {"text": [...], "verb": [...], "state": [...]}


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    arrays = dict(ckpt.params.flat())
    rmsprop_meta = None
    if ckpt.rmsprop is not None:
        rmsprop_meta = {k: ckpt.rmsprop[k] for k in ("lr", "rho", "eps")}
        for name, arr in ckpt.rmsprop["cache"].items():
            arrays[f"rmsprop.{name}"] = arr
    meta = {
        "fingerprint": ckpt.config_fingerprint,
        "epoch": ckpt.epoch,
        "best_val_error": None if np.isinf(ckpt.best_val_error) else ckpt.best_val_error,
        "seeds": ckpt.seeds,
        "rmsprop": rmsprop_meta,
        "vocabs": ckpt.vocabs,
    }
    meta_bytes = json.dumps(meta).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"truncated checkpoint: {path}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != CKPT_MAGIC:
        raise CheckpointError(f"not a checkpoint file (bad magic): {path}")
    version, meta_len = struct.unpack("<II", take(8))
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in {path}")
    meta = json.loads(bytes(take(meta_len)).decode("utf-8"))
    (n_arrays,) = struct.unpack("<I", take(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).copy()
    if pos != len(data):
        raise CheckpointError(f"trailing bytes in checkpoint: {path}")

    cache = {k[len("rmsprop."):]: v for k, v in arrays.items() if k.startswith("rmsprop.")}
    param_arrays = {k: v for k, v in arrays.items() if not k.startswith("rmsprop.")}
    try:
        params = params_from_flat(param_arrays)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint missing parameter array {exc}") from None
    rmsprop = None
    if meta.get("rmsprop") is not None:
        rmsprop = dict(meta["rmsprop"], cache=cache)
    best = meta["best_val_error"]
    return Checkpoint(
        params=params,
        epoch=meta["epoch"],
        best_val_error=np.inf if best is None else float(best),
        config_fingerprint=meta["fingerprint"],
        seeds=meta["seeds"],
        rmsprop=rmsprop,
        vocabs=meta.get("vocabs"),
    )


def check_fingerprint(found: str, expected: str) -> None:
    if found != expected:
        raise CheckpointError(
            f"checkpoint layout {found} does not match configured layout {expected}"
        )


def gradient_check(sizes: ModelSizes, seed: int, n_coords: int = 100,
                   step: float = 1e-5, corrupt_backward: bool = False) -> float:
    """Max relative error between backward() and central finite differences
    of the batch-summed tangent loss, over sampled parameter coordinates.

    ``corrupt_backward`` deliberately scales the analytic gradients so tests
    can confirm the harness actually detects a wrong backward pass.
    """
    from .corpus import Sample, pad_batch

    rng = np.random.default_rng(seed)
    params = init_params(sizes, seed)
    samples = []
    for length in (3, 5):
        verb = np.zeros(sizes.verb_dim)
        verb[rng.integers(0, sizes.verb_dim)] = 1.0
        state = np.zeros(sizes.state_dim)
        state[rng.integers(0, sizes.state_dim)] = 1.0
        samples.append(Sample(
            tokens=rng.integers(0, max(1, sizes.input_dim - 1), size=length).tolist(),
            verb_label=verb, state_label=state,
        ))
    batch = pad_batch(samples, pad_index=sizes.input_dim - 1)

    def total_loss(p):
        verb_pred, state_pred, _ = forward(p, batch)
        loss = 0.0
        for r in range(len(batch)):
            loss += tangent_loss(batch.verb_labels[r], verb_pred[r])
            loss += tangent_loss(batch.state_labels[r], state_pred[r])
        return loss

    verb_pred, state_pred, trace = forward(params, batch)
    grads = backward(params, batch, trace,
                     tangent_loss_grad(batch.verb_labels, verb_pred),
                     tangent_loss_grad(batch.state_labels, state_pred))
    if corrupt_backward:
        grads = {k: v * 1.01 for k, v in grads.items()}

    flat = params.flat()
    names = list(flat.keys())
    total = sum(flat[n].size for n in names)
    coords = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.cumsum([flat[n].size for n in names])

    worst = 0.0
    for coord in coords:
        which = int(np.searchsorted(offsets, coord, side="right"))
        inner = int(coord - (offsets[which - 1] if which else 0))
        arr = flat[names[which]]
        original = arr.flat[inner]
        arr.flat[inner] = original + step
        up = total_loss(params)
        arr.flat[inner] = original - step
        down = total_loss(params)
        arr.flat[inner] = original
        fd = (up - down) / (2.0 * step)
        analytic = grads[names[which]].flat[inner]
        rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-3)
        worst = max(worst, rel)
    return worst
