"""Tangent loss, its analytic gradient, and the cross-entropy-gap error.

The training loss is ``sum_i SCALE * tan(BOUNDED_COEFF * |y_i - p_i|)`` over
label components, with predictions in [0, 1] and labels in {0, 1}.  The
0.499*pi coefficient keeps the loss finite at |y - p| = 1; the pi/2 variant
is unbounded there and exists only so its behaviour on |y - p| < 1 can be
probed.

The error function used for validation is the absolute gap between the cross
entropy of the prediction pmf against the label pmf and the self entropy of
the label pmf, where both pmfs come from a softmax over the raw vectors.
"""

import numpy as np

# Multiplier and angle coefficients of the tangent loss.  SCALE is part of
# the loss definition, not a tunable.
SCALE = 10.0
BOUNDED_COEFF = 0.499 * np.pi
UNBOUNDED_COEFF = 0.5 * np.pi


def _check_same_shape(y, p):
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError(f"dimension mismatch: label {y.shape} vs prediction {p.shape}")
    return y, p


def tangent_loss(y, p, coeff: float = BOUNDED_COEFF) -> float:
    """Sum of SCALE * tan(coeff * |y_i - p_i|) over all components.

    Zero exactly when y == p; bounded above by m * SCALE * tan(coeff) for
    inputs in [0, 1]^m and the default coefficient.
    """
    y, p = _check_same_shape(y, p)
    return float(np.sum(SCALE * np.tan(coeff * np.abs(y - p))))


def tangent_loss_grad(y, p, coeff: float = BOUNDED_COEFF) -> np.ndarray:
    """Derivative of the tangent loss with respect to each p_i.

    Component i is SCALE * coeff * sign(p_i - y_i) / cos^2(coeff * |y_i - p_i|).
    At p_i == y_i the absolute value has a kink; the subgradient 0 is returned
    there (the kink sits exactly at zero loss, so a zero step is the fixed
    point the optimizer should keep).

    Accepts arrays of any shape; the result has the same shape, so a whole
    batch of per-head rows can be differentiated in one call.
    """
    y, p = _check_same_shape(y, p)
    diff = p - y
    sec2 = 1.0 / np.cos(coeff * np.abs(diff)) ** 2
    return np.where(diff == 0.0, 0.0, SCALE * coeff * np.sign(diff) * sec2)


def softmax_pmf(v) -> np.ndarray:
    """Max-shifted softmax of a real vector.

    Rejects non-finite input.  Components of extreme inputs can underflow to
    0.0, but the result still sums to 1 within float tolerance.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("softmax input must be finite")
    shifted = np.exp(v - np.max(v))
    return shifted / np.sum(shifted)


def cross_entropy(p, q) -> float:
    """Cross entropy -sum_x p(x) * log2 q(x), in bits.

    q must be strictly positive; p components may be zero (those terms
    contribute nothing).
    """
    p, q = _check_same_shape(p, q)
    if np.any(q <= 0.0):
        raise ValueError("cross_entropy requires strictly positive q")
    return float(-np.sum(p * np.log2(q)))


def error_epsilon(y, p) -> float:
    """|H(softmax(p), softmax(y)) - H(softmax(y), softmax(y))|.

    Used only for validation and model selection, never for gradients.
    Zero exactly when p == y.
    """
    y, p = _check_same_shape(y, p)
    q_label = softmax_pmf(y)
    p_pred = softmax_pmf(p)
    return abs(cross_entropy(p_pred, q_label) - cross_entropy(q_label, q_label))


def batch_error(label_pairs, pred_pairs) -> float:
    """Mean over samples of error_epsilon(verb head) + error_epsilon(state head).

    ``label_pairs`` and ``pred_pairs`` are equal-length sequences of
    (verb_vector, state_vector) tuples.
    """
    if len(label_pairs) != len(pred_pairs):
        raise ValueError(
            f"got {len(label_pairs)} label pairs but {len(pred_pairs)} prediction pairs"
        )
    if not label_pairs:
        raise ValueError("batch_error over an empty sample set is undefined")
    total = 0.0
    for (y_verb, y_state), (p_verb, p_state) in zip(label_pairs, pred_pairs):
        total += error_epsilon(y_verb, p_verb) + error_epsilon(y_state, p_state)
    return total / len(label_pairs)
