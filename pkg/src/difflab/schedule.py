"""Discrete noise schedule with an exactly-zero terminal signal level.

Timesteps are 1-indexed (t = 1..T); internal arrays are 0-indexed with an
explicit offset. The cumulative signal coefficients are built from a
linear beta ramp and then the sqrt sequence is shifted and rescaled so the
final entry is exactly zero while the first is preserved, making the last
timestep pure noise.

All conversion helpers accept either a single integer timestep or one
timestep per batch row, and run through the autodiff ops so gradients flow
through predictions that are re-noised downstream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor, add, rowscale, scale, sub

__all__ = [
    "NoiseSchedule",
    "build_zero_snr_schedule",
    "forward_diffuse",
    "v_target",
    "v_to_x0",
    "v_to_eps",
    "dump_schedule_csv",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable table of cumulative signal coefficients, t = 1..T."""

    T: int
    alpha_bar: np.ndarray
    sqrt_alpha_bar: np.ndarray
    sqrt_one_minus_alpha_bar: np.ndarray

    def abar(self, t: int) -> float:
        self._check_t(t)
        return float(self.alpha_bar[t - 1])

    def snr(self, t: int) -> float:
        ab = self.abar(t)
        return ab / (1.0 - ab)

    def _check_t(self, t) -> None:
        t = np.asarray(t)
        if t.size == 0 or t.min() < 1 or t.max() > self.T:
            raise ContractError(f"timestep out of range [1, {self.T}]")

    def coeffs(self, t, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
        """(sqrt(abar_t), sqrt(1 - abar_t)) for an int or per-row array t."""
        self._check_t(t)
        idx = np.asarray(t, dtype=np.int64) - 1
        sa = self.sqrt_alpha_bar[idx].astype(dtype)
        sb = self.sqrt_one_minus_alpha_bar[idx].astype(dtype)
        return sa, sb


def build_zero_snr_schedule(T: int = 1000, beta_start: float = 0.00085,
                            beta_end: float = 0.012) -> NoiseSchedule:
    """Linear-beta cumulative products, rescaled to zero terminal signal.

    The sqrt(alpha_bar) sequence is shifted so its last value hits zero,
    then scaled so its first value is unchanged; alpha_bar[T] is pinned to
    exactly 0.0 afterwards.
    """
    if T < 2:
        raise ConfigError(f"schedule needs T >= 2, got {T}")
    if not (0.0 < beta_start < beta_end < 1.0):
        raise ConfigError(f"invalid beta range ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - betas)
    s = np.sqrt(alpha_bar)
    s_first, s_last = s[0], s[-1]
    s = (s - s_last) * (s_first / (s_first - s_last))
    alpha_bar = s**2
    alpha_bar[-1] = 0.0
    if not np.all(np.diff(alpha_bar) < 0):
        raise ConfigError("rescaled schedule is not strictly decreasing")
    return NoiseSchedule(
        T=T,
        alpha_bar=alpha_bar,
        sqrt_alpha_bar=np.sqrt(alpha_bar),
        sqrt_one_minus_alpha_bar=np.sqrt(1.0 - alpha_bar),
    )


def _combine(x: Tensor, cx, y: Tensor, cy, subtract: bool = False) -> Tensor:
    """cx*x -/+ cy*y where the coefficients are scalars or per-row arrays."""
    if x.shape != y.shape:
        raise DimensionError(f"schedule op: shapes {x.shape} vs {y.shape}")
    if np.ndim(cx) == 0:
        a = scale(x, float(cx))
        b = scale(y, float(cy))
    else:
        a = rowscale(x, cx)
        b = rowscale(y, cy)
    return sub(a, b) if subtract else add(a, b)


def _per_row(t, x: Tensor):
    """Scalar t stays scalar; otherwise it must give one step per batch row."""
    t = np.asarray(t)
    if t.ndim == 0:
        return int(t)
    if t.ndim != 1 or len(x.shape) < 1 or t.shape[0] != x.shape[0]:
        raise DimensionError(f"timestep array {t.shape} does not match batch of {x.shape}")
    return t


def forward_diffuse(x0: Tensor, eps: Tensor, t, s: NoiseSchedule) -> Tensor:
    """sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    t = _per_row(t, x0)
    sa, sb = s.coeffs(t, x0.dtype)
    return _combine(x0, sa, eps, sb)


def v_target(x0: Tensor, eps: Tensor, t, s: NoiseSchedule) -> Tensor:
    """sqrt(abar_t) * eps - sqrt(1 - abar_t) * x0."""
    t = _per_row(t, x0)
    sa, sb = s.coeffs(t, x0.dtype)
    return _combine(eps, sa, x0, sb, subtract=True)


def v_to_x0(v: Tensor, x_t: Tensor, t, s: NoiseSchedule) -> Tensor:
    """sqrt(abar_t) * x_t - sqrt(1 - abar_t) * v."""
    t = _per_row(t, x_t)
    sa, sb = s.coeffs(t, x_t.dtype)
    return _combine(x_t, sa, v, sb, subtract=True)


def v_to_eps(v: Tensor, x_t: Tensor, t, s: NoiseSchedule) -> Tensor:
    """sqrt(abar_t) * v + sqrt(1 - abar_t) * x_t."""
    t = _per_row(t, x_t)
    sa, sb = s.coeffs(t, x_t.dtype)
    return _combine(v, sa, x_t, sb)


def dump_schedule_csv(s: NoiseSchedule, path: str) -> None:
    """Write one row per timestep: t, alpha_bar, snr."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "alpha_bar", "snr"])
        for t in range(1, s.T + 1):
            ab = s.alpha_bar[t - 1]
            writer.writerow([t, repr(float(ab)), repr(float(ab / (1.0 - ab)))])
