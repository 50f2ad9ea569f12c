"""Closed-form references the learned models are checked against.

For a finite dataset the regression target of squared-error v training has
an exact form: a softmax-weighted posterior mean over the data points.
The same construction extends in closed form to isotropic Gaussian
mixtures. These functions are pure numpy in double precision and never
touch the autodiff engine, so they stay independent of the code paths
they verify.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .schedule import NoiseSchedule
from .tensor import Tensor

__all__ = [
    "FiniteDataset",
    "GaussianMixture",
    "posterior_optimal_v",
    "gaussian_mixture_v",
    "mse_midpoint",
]


@dataclass
class FiniteDataset:
    """Uniformly weighted empirical distribution with optional class labels."""

    points: np.ndarray  # (n, ...) float
    labels: np.ndarray | None = None  # (n,) int
    num_classes: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points)
        if self.points.shape[0] == 0:
            raise ConfigError("dataset must be nonempty")
        if not np.all(np.isfinite(self.points)):
            raise ConfigError("dataset contains non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.points.shape[0],):
                raise ConfigError("labels must be one integer per point")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def sample_shape(self) -> tuple:
        return self.points.shape[1:]

    def flat(self) -> np.ndarray:
        return self.points.reshape(len(self), -1).astype(np.float64)

    def subset(self, mask: np.ndarray) -> "FiniteDataset":
        return FiniteDataset(
            self.points[mask],
            None if self.labels is None else self.labels[mask],
            self.num_classes,
        )


@dataclass(frozen=True)
class GaussianMixture:
    """Isotropic mixture: weights (K,), means (K, d), sigmas (K,)."""

    weights: np.ndarray
    means: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(self, "means", np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "sigmas", np.asarray(self.sigmas, dtype=np.float64))
        if not np.isclose(self.weights.sum(), 1.0, atol=1e-9):
            raise ConfigError("mixture weights must sum to 1")
        if np.any(self.sigmas < 0):
            raise ConfigError("mixture sigmas must be nonnegative")


def _as_batch(x_t) -> tuple[np.ndarray, bool, tuple]:
    data = x_t.data if isinstance(x_t, Tensor) else np.asarray(x_t)
    orig_shape = data.shape
    if data.ndim == 1:
        return data[None].astype(np.float64), True, orig_shape
    return data.reshape(data.shape[0], -1).astype(np.float64), False, orig_shape


def _wrap_like(result: np.ndarray, x_t, squeeze: bool, orig_shape: tuple):
    result = result[0] if squeeze else result.reshape(orig_shape)
    if isinstance(x_t, Tensor):
        return Tensor(result.astype(x_t.dtype))
    return result.astype(np.asarray(x_t).dtype if np.asarray(x_t).dtype.kind == "f" else np.float64)


def _v_from_posterior_mean(xb: np.ndarray, ex0: np.ndarray, sa: float, sb: float) -> np.ndarray:
    eeps = (xb - sa * ex0) / sb
    return sa * eeps - sb * ex0


def posterior_optimal_v(x_t, t: int, dataset: FiniteDataset, s: NoiseSchedule):
    """Exact minimizer of the squared-error v objective over a finite dataset.

    Posterior weights over the data points are softmax of
    -||x_t - sqrt(abar) x_i||^2 / (2 (1 - abar)), evaluated with
    log-sum-exp stabilization in double precision.
    """
    ab = s.abar(t)
    if ab >= 1.0:
        raise ContractError("posterior is undefined at a noiseless timestep (abar == 1)")
    sa, sb = np.sqrt(ab), np.sqrt(1.0 - ab)
    xb, squeeze, orig = _as_batch(x_t)
    pts = dataset.flat()  # (n, d)
    sq = ((xb[:, None, :] - sa * pts[None, :, :]) ** 2).sum(axis=2)  # (b, n)
    logw = -sq / (2.0 * (1.0 - ab))
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    ex0 = w @ pts  # (b, d)
    return _wrap_like(_v_from_posterior_mean(xb, ex0, sa, sb), x_t, squeeze, orig)


def gaussian_mixture_v(x_t, t: int, mixture: GaussianMixture, s: NoiseSchedule):
    """Closed-form analogue of posterior_optimal_v for an isotropic mixture.

    Under forward diffusion each component contributes a Gaussian over x_t
    with variance abar*sigma_k^2 + (1-abar); responsibilities and the
    per-component posterior means of x0 combine in closed form.
    """
    ab = s.abar(t)
    if ab >= 1.0:
        raise ContractError("posterior is undefined at a noiseless timestep (abar == 1)")
    sa, sb = np.sqrt(ab), np.sqrt(1.0 - ab)
    xb, squeeze, orig = _as_batch(x_t)
    d = xb.shape[1]
    var_k = ab * mixture.sigmas**2 + (1.0 - ab)  # (K,)
    delta = xb[:, None, :] - sa * mixture.means[None, :, :]  # (b, K, d)
    sq = (delta**2).sum(axis=2)  # (b, K)
    logr = np.log(mixture.weights)[None, :] - 0.5 * d * np.log(2.0 * np.pi * var_k)[None, :]
    logr = logr - sq / (2.0 * var_k[None, :])
    logr -= logr.max(axis=1, keepdims=True)
    r = np.exp(logr)
    r /= r.sum(axis=1, keepdims=True)
    gain = (sa * mixture.sigmas**2 / var_k)[None, :, None]  # (1, K, 1)
    comp_mean = mixture.means[None, :, :] + gain * delta  # (b, K, d)
    ex0 = (r[:, :, None] * comp_mean).sum(axis=1)
    return _wrap_like(_v_from_posterior_mean(xb, ex0, sa, sb), x_t, squeeze, orig)


def mse_midpoint(samples) -> np.ndarray:
    """Arithmetic mean: the unique minimizer of summed squared distances."""
    arrs = [(x.data if isinstance(x, Tensor) else np.asarray(x)) for x in samples]
    if not arrs:
        raise ConfigError("mse_midpoint needs at least one sample")
    stacked = np.stack([a.astype(np.float64) for a in arrs])
    return stacked.mean(axis=0)
