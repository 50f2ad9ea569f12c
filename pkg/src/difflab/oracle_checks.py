"""Self-verification battery behind the `oracle-check` CLI subcommand.

Each check returns (name, passed, detail). The quick set runs in seconds;
--full adds the trained-model-vs-analytic-posterior comparison, which
trains a small network first.
"""

from __future__ import annotations

import os

import numpy as np

from .datasets import generate_dataset, to_pixels, write_pgm
from .models import Conditioning, Mlp2d
from .optim import AdamState, adam_step, collect_grads, zero_grads
from .oracles import FiniteDataset, mse_midpoint, posterior_optimal_v
from .sampler import ddim_step, make_timestep_grid
from .schedule import build_zero_snr_schedule, forward_diffuse, v_target, v_to_eps, v_to_x0
from .tensor import Tape, Tensor, backward

__all__ = ["run_oracle_checks", "train_mse_to_convergence", "posterior_probe_mse"]


def _check_schedule(s) -> tuple:
    ok = (
        s.alpha_bar[-1] == 0.0
        and bool(np.all(np.diff(s.alpha_bar) < 0))
        and s.alpha_bar[0] < 1.0
        and make_timestep_grid(25, s.T)[0] == s.T
    )
    return ("schedule-invariants", ok,
            f"terminal={s.alpha_bar[-1]}, monotone, grid starts at {s.T}")


def _check_round_trips(s, n=1000) -> tuple:
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(n):
        t = int(rng.integers(1, s.T))
        x0 = Tensor(rng.standard_normal(2).astype(np.float32))
        eps = Tensor(rng.standard_normal(2).astype(np.float32))
        x_t = forward_diffuse(x0, eps, t, s)
        v = v_target(x0, eps, t, s)
        worst = max(worst, float(np.abs(v_to_x0(v, x_t, t, s).data - x0.data).max()))
        worst = max(worst, float(np.abs(v_to_eps(v, x_t, t, s).data - eps.data).max()))
    return ("conversion-round-trips", worst < 1e-5, f"max error {worst:.2e} over {n} tuples")


def _check_solver_equivalence(s, n=1000) -> tuple:
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(n):
        t = int(rng.integers(1, s.T + 1))
        tp = int(rng.integers(1, s.T + 1))
        x_t = Tensor(rng.standard_normal((1, 2)).astype(np.float32))
        v = Tensor(rng.standard_normal((1, 2)).astype(np.float32))
        renoised = forward_diffuse(v_to_x0(v, x_t, t, s), v_to_eps(v, x_t, t, s), tp, s)
        stepped = ddim_step(x_t, v, t, tp, s)
        worst = max(worst, float(np.abs(renoised.data - stepped.data).max()))
    return ("renoise-equals-solver-step", worst < 1e-5, f"max error {worst:.2e} over {n} tuples")


def _check_collision_identity(s, n=200) -> tuple:
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(n):
        t = int(rng.integers(1, s.T + 1))
        x_t = Tensor(rng.standard_normal((1, 2)).astype(np.float32))
        v = Tensor((5.0 * rng.standard_normal((1, 2))).astype(np.float32))
        back = forward_diffuse(v_to_x0(v, x_t, t, s), v_to_eps(v, x_t, t, s), t, s)
        worst = max(worst, float(np.abs(back.data - x_t.data).max()))
    return ("same-timestep-renoise-identity", worst < 1e-6, f"max error {worst:.2e}")


def _check_midpoint(outdir: str | None) -> tuple:
    rng = np.random.default_rng(3)
    pts = [rng.standard_normal(3) for _ in range(10)]
    m = rng.standard_normal(3)
    for _ in range(3000):
        m = m - 0.01 * sum(2.0 * (m - x) for x in pts)
    err_descent = float(np.abs(mse_midpoint(pts) - m).max())

    shapes = generate_dataset("shapes16", {"n": 2}, np.random.default_rng(4))
    blend = mse_midpoint([shapes.points[0], shapes.points[1]])
    err_blend = float(np.abs(blend - (shapes.points[0] + shapes.points[1]) / 2.0).max())
    if outdir:
        os.makedirs(outdir, exist_ok=True)
        strip = np.concatenate(
            [to_pixels(shapes.points[0]), to_pixels(blend), to_pixels(shapes.points[1])], axis=1)
        write_pgm(os.path.join(outdir, "midpoint_blend.pgm"), strip,
                  comment="left exemplar | squared-distance midpoint | right exemplar")
    ok = err_descent < 1e-4 and err_blend < 1e-6
    return ("midpoint-is-mean", ok, f"descent err {err_descent:.2e}, blend err {err_blend:.2e}")


def train_mse_to_convergence(data: FiniteDataset, s, steps: int = 4000, hidden: int = 256,
                             lr: float = 1e-3, batch: int = 256, seed: int = 0) -> Mlp2d:
    """Overparameterized MLP fitted with the squared-error objective."""
    from .objectives import mse_loss

    model = Mlp2d(num_classes=1, hidden=hidden, seed=seed)
    params = model.parameters()
    state = AdamState(params)
    n = len(data)
    for step in range(steps):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 42, step)))
        idx = rng.integers(0, n, size=batch)
        x0 = Tensor(np.ascontiguousarray(data.points[idx], dtype=np.float32))
        c = Conditioning.null(batch)
        step_lr = lr if step < steps // 2 else lr * 0.1
        with Tape() as tape:
            res = mse_loss(model, x0, c, rng, s)
        backward(res.loss, tape)
        adam_step(params, collect_grads(params), state, step_lr)
        zero_grads(params)
    return model


def posterior_probe_mse(model, data: FiniteDataset, s, n_probe: int = 2000,
                        abar_lo: float = 0.05, abar_hi: float = 0.95, seed: int = 1) -> float:
    """Mean squared gap between the model and the exact posterior regressor,
    probed at forward-process inputs with mid-range signal levels."""
    rng = np.random.default_rng(seed)
    valid_t = np.array([t for t in range(1, s.T + 1) if abar_lo <= s.abar(t) <= abar_hi])
    t = rng.choice(valid_t, size=n_probe)
    idx = rng.integers(0, len(data), size=n_probe)
    x0 = Tensor(np.ascontiguousarray(data.points[idx], dtype=np.float32))
    eps = Tensor(rng.standard_normal(x0.shape).astype(np.float32))
    x_t = forward_diffuse(x0, eps, t, s)
    v_model = model.forward(x_t, t, Conditioning.null(n_probe)).data
    v_star = np.empty_like(v_model)
    for ti in np.unique(t):
        mask = t == ti
        v_star[mask] = posterior_optimal_v(x_t.data[mask], int(ti), data, s)
    return float(np.mean((v_model - v_star) ** 2))


def _check_mle_flow(s) -> tuple:
    pts = np.array([[0.8, 0.8], [0.8, -0.8], [-0.8, 0.8], [-0.8, -0.8]], dtype=np.float32)
    data = FiniteDataset(pts)
    model = train_mse_to_convergence(data, s)
    gap = posterior_probe_mse(model, data, s)
    return ("trained-mse-matches-posterior", gap < 1e-2, f"mean squared gap {gap:.2e}")


def run_oracle_checks(full: bool = False, outdir: str | None = None) -> list[tuple]:
    s = build_zero_snr_schedule()
    results = [
        _check_schedule(s),
        _check_round_trips(s),
        _check_solver_equivalence(s),
        _check_collision_identity(s),
        _check_midpoint(outdir),
    ]
    if full:
        results.append(_check_mle_flow(s))
    return results
