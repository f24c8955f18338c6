"""RMSProp: divide each gradient by a running average of its recent magnitude.

Per coordinate: cache <- rho*cache + (1-rho)*g^2, then
theta <- theta - lr * g / (sqrt(cache) + eps).
"""

from dataclasses import dataclass

import numpy as np

from .network import ModelParams


@dataclass
class RmsPropState:
    cache: dict[str, np.ndarray]
    lr: float = 1e-4
    rho: float = 0.9
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: ModelParams, lr: float = 1e-4, rho: float = 0.9,
              eps: float = 1e-8) -> "RmsPropState":
        return cls(cache={name: np.zeros_like(arr) for name, arr in params.flat().items()},
                   lr=lr, rho=rho, eps=eps)


def rmsprop_step(params: ModelParams, grads: dict[str, np.ndarray],
                 state: RmsPropState, clip: float | None = None):
    """Apply one update in place; returns (params, state) for convenience.

    Non-finite gradients are rejected with the offending coordinate named.
    ``clip`` optionally bounds each gradient component before the update
    (off by default).
    """
    flat = params.flat()
    for name, theta in flat.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {theta.shape}")
        if not np.all(np.isfinite(g)):
            bad = np.argwhere(~np.isfinite(np.atleast_1d(g)))[0]
            raise ValueError(f"non-finite gradient at {name}{bad.tolist()}")
        if clip is not None:
            g = np.clip(g, -clip, clip)
        cache = state.cache[name]
        cache *= state.rho
        cache += (1.0 - state.rho) * g * g
        theta -= state.lr * g / (np.sqrt(cache) + state.eps)
    return params, state
