"""Deterministic denoising sampler with classifier-free guidance.

The sampler starts from pure noise at the terminal timestep (where the
schedule retains zero signal), walks a strictly decreasing timestep grid,
and at each step converts the v prediction into (x0, eps) and re-noises to
the next grid point. The final transition targets t=0, i.e. the predicted
clean sample itself.

Guidance queries the model a second time with null conditioning and
extrapolates in v space; an optional variance rescale blends the guided
prediction back toward the conditional prediction's per-sample spread.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .models import Conditioning, DenoiserModel
from .schedule import NoiseSchedule, forward_diffuse, v_to_eps, v_to_x0
from .tensor import Tensor, add, rowscale, scale, sub

__all__ = [
    "SamplerConfig",
    "StepRecord",
    "SampleTrajectory",
    "make_timestep_grid",
    "ddim_step",
    "cfg_combine",
    "cfg_rescale",
    "sample",
]


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    cfg_scale: float = 1.0  # 0 or 1 disables the second (null) query
    rescale_phi: float = 0.0
    record_trajectory: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.cfg_scale < 0:
            raise ConfigError(f"cfg_scale must be >= 0, got {self.cfg_scale}")
        if not 0.0 <= self.rescale_phi <= 1.0:
            raise ConfigError(f"rescale_phi must be in [0,1], got {self.rescale_phi}")


@dataclass
class StepRecord:
    t: int
    x_t: np.ndarray
    v: np.ndarray
    x0_hat: np.ndarray


@dataclass
class SampleTrajectory:
    steps: list[StepRecord] = field(default_factory=list)
    final: np.ndarray | None = None
    nfe: int = 0


def make_timestep_grid(steps: int, T: int) -> list[int]:
    """Strictly decreasing rounded-even grid from T down to 1."""
    if steps < 1 or steps > T:
        raise ConfigError(f"steps must be in [1, {T}], got {steps}")
    if steps == 1:
        return [T]
    # floor(x + 0.5) keeps the spacing >= 1 guarantee that np.round's
    # round-half-even would break.
    grid = np.floor(np.linspace(T, 1, steps) + 0.5).astype(int)
    assert grid[0] == T and grid[-1] == 1 and np.all(np.diff(grid) < 0)
    return [int(t) for t in grid]


def ddim_step(x_t: Tensor, v: Tensor, t: int, t_next: int, s: NoiseSchedule) -> Tensor:
    """Deterministic transition: decode (x0, eps) at t, re-noise at t_next.

    t_next = 0 returns the decoded x0 itself. Transitions with
    t_next >= t are algebraically well-defined (the objective module's
    re-noising uses them) and are permitted here; the sampling loop's grid
    is strictly decreasing by construction.
    """
    if not 1 <= t <= s.T:
        raise ContractError(f"timestep {t} out of range [1, {s.T}]")
    if not 0 <= t_next <= s.T:
        raise ContractError(f"target timestep {t_next} out of range [0, {s.T}]")
    x0_hat = v_to_x0(v, x_t, t, s)
    if t_next == 0:
        return x0_hat
    eps_hat = v_to_eps(v, x_t, t, s)
    return forward_diffuse(x0_hat, eps_hat, t_next, s)


def cfg_combine(v_cond: Tensor, v_uncond: Tensor, w: float) -> Tensor:
    """v_uncond + w * (v_cond - v_uncond)."""
    return add(v_uncond, scale(sub(v_cond, v_uncond), w))


def cfg_rescale(v_guided: Tensor, v_cond: Tensor, phi: float) -> Tensor:
    """Blend the std-matched guided prediction with the raw one by phi.

    Per-sample standard deviations are taken over all non-batch dimensions;
    samples whose guided std is zero are left untouched.
    """
    if not 0.0 <= phi <= 1.0:
        raise ConfigError(f"phi must be in [0,1], got {phi}")
    axes = tuple(range(1, len(v_guided.shape)))
    std_cond = v_cond.data.std(axis=axes)
    std_guided = v_guided.data.std(axis=axes)
    factor = np.where(std_guided > 0, std_cond / np.where(std_guided > 0, std_guided, 1.0), 1.0)
    rescaled = rowscale(v_guided, factor)
    return add(scale(rescaled, phi), scale(v_guided, 1.0 - phi))


def sample(model: DenoiserModel, c: Conditioning, cfg: SamplerConfig, s: NoiseSchedule,
           rng: np.random.Generator) -> SampleTrajectory:
    """Run the full grid from terminal noise; returns the trajectory record.

    The model is queried twice per step (conditional + null) only when
    guidance is active, i.e. cfg_scale not in {0, 1} and the batch carries
    real conditioning; this is what the NFE counter reflects.
    """
    grid = make_timestep_grid(cfg.steps, s.T)
    batch = c.batch_size
    x = Tensor(rng.standard_normal((batch,) + model.sample_shape).astype(np.float32))
    use_cfg = cfg.cfg_scale not in (0.0, 1.0) and not c.all_null()
    null = Conditioning.null(batch)

    traj = SampleTrajectory()
    for i, t in enumerate(grid):
        t_next = grid[i + 1] if i + 1 < len(grid) else 0
        v_cond = model.forward(x, t, c)
        traj.nfe += 1
        if use_cfg:
            v_uncond = model.forward(x, t, null)
            traj.nfe += 1
            v = cfg_combine(v_cond, v_uncond, cfg.cfg_scale)
            if cfg.rescale_phi > 0.0:
                v = cfg_rescale(v, v_cond, cfg.rescale_phi)
        else:
            v = v_cond
        if cfg.record_trajectory:
            x0_hat = v_to_x0(v, x, t, s)
            traj.steps.append(StepRecord(t, x.data.copy(), v.data.copy(), x0_hat.data.copy()))
        x = ddim_step(x, v, t, t_next, s)
    traj.final = x.data.copy()
    return traj
