"""Training objectives: plain v-space MSE and the feature-distance loss.

The feature-distance objective re-noises both the ground truth and the
model's prediction to a second timestep and compares them inside a frozen
copy of the pretrained denoiser: convert the predicted v into (x0, eps),
re-noise both the true and predicted pair to t', and measure the distance
between the frozen network's hidden features at the configured tap.
Gradients reach only the online model; the frozen network is a fixed lens.

Timesteps are drawn independently per batch element.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import ConfigError, ContractError, NumericalError
from .models import Conditioning, DenoiserModel, FeatureTap
from .schedule import NoiseSchedule, forward_diffuse, v_target, v_to_eps, v_to_x0
from .tensor import Tensor, add, mae_reduce, mse_reduce, scale

__all__ = [
    "DeltaStep",
    "GaussianAroundT",
    "UniformInt",
    "SpConfig",
    "LossBatchResult",
    "mse_loss",
    "sp_loss",
    "sample_tprime",
    "apply_cond_dropout",
]


@dataclass(frozen=True)
class DeltaStep:
    """t' = t +/- k with equal probability, clamped to [1, T]."""

    k: int = 40


@dataclass(frozen=True)
class GaussianAroundT:
    """t' = round(N(t, sigma)), clamped to [1, T]."""

    sigma: float = 100.0


@dataclass(frozen=True)
class UniformInt:
    """t' uniform over {1..T}."""


TprimeSampler = Union[DeltaStep, GaussianAroundT, UniformInt]


@dataclass(frozen=True)
class SpConfig:
    """Hyperparameters of the feature-distance objective."""

    tap: FeatureTap = FeatureTap.MID_ONLY
    tprime_sampler: TprimeSampler = field(default_factory=UniformInt)
    feature_distance: str = "mse"  # "mse" | "mae"
    cond_dropout_prob: float = 0.1

    def __post_init__(self):
        if self.feature_distance not in ("mse", "mae"):
            raise ConfigError(f"unknown feature distance '{self.feature_distance}'")
        if not 0.0 <= self.cond_dropout_prob <= 1.0:
            raise ConfigError(f"cond_dropout_prob must be in [0,1], got {self.cond_dropout_prob}")


@dataclass
class LossBatchResult:
    loss: Tensor
    aux: dict[str, float]

    def __post_init__(self):
        if not np.isfinite(self.loss.data).all():
            raise NumericalError(f"non-finite loss (aux: {self.aux})")


def _shift_within_bounds(t: int, T: int, rng: np.random.Generator) -> int:
    d = 1 if rng.random() < 0.5 else -1
    if not 1 <= t + d <= T:
        d = -d
    return t + d


def sample_tprime(t: int, T: int, cfg: SpConfig, rng: np.random.Generator) -> int:
    """Draw a second timestep in [1, T], never returning t itself.

    Collisions are resolved per sampler family: clamped samplers shift the
    result by one step back into bounds; the uniform sampler redraws once
    and falls back to the same shift if it collides again.
    """
    if not 1 <= t <= T:
        raise ContractError(f"timestep {t} out of range [1, {T}]")
    sampler = cfg.tprime_sampler
    if isinstance(sampler, DeltaStep):
        d = sampler.k if rng.random() < 0.5 else -sampler.k
        tp = min(max(t + d, 1), T)
        if tp == t:
            tp = t - 1 if t > 1 else t + 1
        return tp
    if isinstance(sampler, GaussianAroundT):
        tp = int(np.floor(rng.normal(t, sampler.sigma) + 0.5))
        tp = min(max(tp, 1), T)
        if tp == t:
            tp = _shift_within_bounds(t, T, rng)
        return tp
    if isinstance(sampler, UniformInt):
        tp = int(rng.integers(1, T + 1))
        if tp == t:
            tp = int(rng.integers(1, T + 1))
        if tp == t:
            tp = _shift_within_bounds(t, T, rng)
        return tp
    raise ConfigError(f"unknown t' sampler {sampler!r}")


def apply_cond_dropout(c: Conditioning, p: float, rng: np.random.Generator) -> Conditioning:
    """Replace each class id by the null token with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"dropout probability must be in [0,1], got {p}")
    drop = rng.random(c.batch_size) < p
    return Conditioning(np.where(drop, -1, c.class_ids))


def _draw_batch(x0: Tensor, rng: np.random.Generator, s: NoiseSchedule):
    batch = x0.shape[0]
    t = rng.integers(1, s.T + 1, size=batch)
    eps = Tensor(rng.standard_normal(x0.shape).astype(x0.dtype))
    return t, eps


def mse_loss(model: DenoiserModel, x0: Tensor, c: Conditioning, rng: np.random.Generator,
             s: NoiseSchedule) -> LossBatchResult:
    """Mean squared error between the v prediction and its analytic target."""
    t, eps = _draw_batch(x0, rng, s)
    x_t = forward_diffuse(x0, eps, t, s)
    target = v_target(x0, eps, t, s)
    v_hat = model.forward(x_t, t, c)
    loss = mse_reduce(v_hat, target)
    aux = {
        "t_mean": float(t.mean()),
        "abar_mean": float(s.alpha_bar[t - 1].mean()),
    }
    return LossBatchResult(loss, aux)


def sp_loss(online_model: DenoiserModel, frozen_p: DenoiserModel, x0: Tensor, c: Conditioning,
            rng: np.random.Generator, s: NoiseSchedule, cfg: SpConfig,
            tprime_override: np.ndarray | None = None) -> LossBatchResult:
    """Feature distance between the re-noised prediction and ground truth.

    tprime_override pins t' per element and exists for tests only (e.g.
    forcing t' = t to check the collision identity).
    """
    if any(p.requires_grad for p in frozen_p.parameters().values()):
        raise ContractError("perceptual network must be frozen (requires_grad=False)")
    t, eps = _draw_batch(x0, rng, s)
    x_t = forward_diffuse(x0, eps, t, s)

    v_hat = online_model.forward(x_t, t, c)
    x0_hat = v_to_x0(v_hat, x_t, t, s)
    eps_hat = v_to_eps(v_hat, x_t, t, s)

    if tprime_override is not None:
        tprime = np.asarray(tprime_override, dtype=np.int64)
    else:
        tprime = np.array([sample_tprime(int(ti), s.T, cfg, rng) for ti in t])

    x_tp = forward_diffuse(x0, eps, tprime, s)
    x_tp_hat = forward_diffuse(x0_hat, eps_hat, tprime, s)

    _, feats_real = frozen_p.forward_with_features(x_tp, tprime, c, cfg.tap)
    _, feats_pred = frozen_p.forward_with_features(x_tp_hat, tprime, c, cfg.tap)

    distance = mse_reduce if cfg.feature_distance == "mse" else mae_reduce
    terms = [distance(fp, fr) for fp, fr in zip(feats_pred, feats_real)]
    loss = terms[0]
    for term in terms[1:]:
        loss = add(loss, term)
    if len(terms) > 1:
        loss = scale(loss, 1.0 / len(terms))

    aux = {
        "t_mean": float(t.mean()),
        "tprime_mean": float(tprime.mean()),
        "abar_mean": float(s.alpha_bar[t - 1].mean()),
    }
    return LossBatchResult(loss, aux)
