"""Adam parameter updates and exponential moving averages."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericalError
from .tensor import Tensor

__all__ = ["AdamState", "adam_step", "collect_grads", "zero_grads", "ema_init", "ema_update"]


class AdamState:
    """First/second moment accumulators plus the bias-correction step count."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(p.shape, dtype=np.float64) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape, dtype=np.float64) for k, p in params.items()}


def collect_grads(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Read .grad per parameter, treating an untouched grad as zero."""
    return {
        k: (p.grad if p.grad is not None else np.zeros(p.shape, dtype=p.dtype))
        for k, p in params.items()
    }


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
              lr: float) -> None:
    """One bias-corrected adaptive-moment update, in place on params.

    Moments are kept in float64 so repeated tiny updates do not stall in
    float32 accumulation.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter '{name}'")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name].astype(np.float64)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data -= (lr * update).astype(p.dtype)


def ema_init(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in params.items()}


def ema_update(ema_params: dict[str, np.ndarray], online_params: dict[str, Tensor],
               decay: float) -> None:
    """ema <- decay * ema + (1 - decay) * online, elementwise in place."""
    if not 0.0 <= decay < 1.0:
        raise ConfigError(f"ema decay must be in [0, 1), got {decay}")
    for name, ema in ema_params.items():
        online = online_params[name].data
        ema *= decay
        ema += (1.0 - decay) * online
