"""Analytic posterior oracles and the squared-distance midpoint."""

import numpy as np
import pytest

from difflab.errors import ConfigError, ContractError
from difflab.oracles import (
    FiniteDataset,
    GaussianMixture,
    gaussian_mixture_v,
    mse_midpoint,
    posterior_optimal_v,
)
from difflab.schedule import NoiseSchedule, build_zero_snr_schedule, v_target
from difflab.tensor import Tensor

S = build_zero_snr_schedule()
RNG = np.random.default_rng(404)

FOUR_POINTS = FiniteDataset(np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]],
                                     dtype=np.float32))


def naive_posterior_v(x_t: np.ndarray, t: int, data: FiniteDataset, s: NoiseSchedule):
    """Direct softmax weighting without log-sum-exp; overflow-prone on purpose."""
    ab = s.abar(t)
    sa, sb = np.sqrt(ab), np.sqrt(1 - ab)
    pts = data.flat()
    w = np.exp(-((x_t[None, :] - sa * pts) ** 2).sum(axis=1) / (2 * (1 - ab)))
    w = w / w.sum()
    ex0 = w @ pts
    eeps = (x_t - sa * ex0) / sb
    return sa * eeps - sb * ex0


class TestPosteriorOptimalV:
    def test_single_point_posterior_is_the_point(self):
        x0 = np.array([0.3, -0.8])
        data = FiniteDataset(x0[None, :])
        for t in (1, 400, 999):
            x_t = RNG.standard_normal(2)
            v = posterior_optimal_v(x_t, t, data, S)
            # with E[x0|x_t] = x0, eps is implied by x_t; v matches the
            # analytic target at that implied eps
            ab = S.abar(t)
            implied_eps = (x_t - np.sqrt(ab) * x0) / np.sqrt(1 - ab)
            expect = v_target(Tensor(x0), Tensor(implied_eps), t, S).data
            assert np.allclose(v, expect, atol=1e-5)

    def test_symmetric_two_points_at_origin(self):
        a = np.array([0.9, 0.4])
        data = FiniteDataset(np.stack([a, -a]))
        v = posterior_optimal_v(np.zeros(2), 500, data, S)
        # E[x0|0] = 0 by symmetry, so v = sqrt(abar) * E[eps|0] = sqrt(abar)*0...
        ab = S.abar(500)
        expect = np.sqrt(ab) * (np.zeros(2) / np.sqrt(1 - ab))
        assert np.allclose(v, expect, atol=1e-12)

    def test_matches_naive_weighting_at_moderate_noise(self):
        for t in (300, 600, 900):
            x_t = RNG.standard_normal(2) * 0.7
            stable = posterior_optimal_v(x_t, t, FOUR_POINTS, S)
            naive = naive_posterior_v(x_t, t, FOUR_POINTS, S)
            assert np.allclose(stable, naive, atol=1e-6)

    def test_batched_matches_per_sample(self):
        xs = RNG.standard_normal((5, 2))
        batch = posterior_optimal_v(xs, 700, FOUR_POINTS, S)
        for i in range(5):
            assert np.allclose(batch[i], posterior_optimal_v(xs[i], 700, FOUR_POINTS, S))

    def test_is_the_squared_loss_minimizer(self):
        # E over the posterior of ||v - v_target||^2 is minimized at the
        # oracle value: perturbing in any direction increases the
        # conditional expected loss computed by direct finite summation.
        t = 450
        ab = S.abar(t)
        sa, sb = np.sqrt(ab), np.sqrt(1 - ab)
        x_t = np.array([0.4, -0.2])
        pts = FOUR_POINTS.flat()
        logw = -((x_t[None, :] - sa * pts) ** 2).sum(axis=1) / (2 * (1 - ab))
        w = np.exp(logw - logw.max())
        w /= w.sum()

        def expected_loss(v):
            # conditional on x_t, each candidate x0 implies eps and v_target
            total = 0.0
            for wi, x0 in zip(w, pts):
                eps = (x_t - sa * x0) / sb
                vt = sa * eps - sb * x0
                total += wi * ((v - vt) ** 2).sum()
            return total

        v_star = posterior_optimal_v(x_t, t, FOUR_POINTS, S)
        base = expected_loss(v_star)
        for delta in (np.array([1e-2, 0.0]), np.array([0.0, -1e-2]), np.array([1e-2, 1e-2])):
            assert expected_loss(v_star + delta) > base

    def test_rejects_unit_alpha(self):
        abar = np.array([1.0, 0.5, 0.0])
        s = NoiseSchedule(3, abar, np.sqrt(abar), np.sqrt(1 - abar))
        with pytest.raises(ContractError):
            posterior_optimal_v(np.zeros(2), 1, FOUR_POINTS, s)

    def test_tensor_in_tensor_out(self):
        v = posterior_optimal_v(Tensor(np.zeros((3, 2), dtype=np.float32)), 200, FOUR_POINTS, S)
        assert isinstance(v, Tensor)
        assert v.dtype == np.float32


class TestGaussianMixtureV:
    def test_tiny_sigma_reduces_to_point_posterior(self):
        means = np.array([[0.5, -0.5]])
        mix = GaussianMixture(np.array([1.0]), means, np.array([1e-6]))
        data = FiniteDataset(means.astype(np.float32))
        for t in (100, 500, 950):
            x_t = RNG.standard_normal(2)
            assert np.allclose(
                gaussian_mixture_v(x_t, t, mix, S),
                posterior_optimal_v(x_t, t, data, S),
                atol=1e-3,
            )

    def test_symmetric_mixture_at_origin(self):
        a = np.array([1.2, 0.0])
        mix = GaussianMixture(np.array([0.5, 0.5]), np.stack([a, -a]), np.array([0.3, 0.3]))
        v = gaussian_mixture_v(np.zeros(2), 600, mix, S)
        ab = S.abar(600)
        # E[x0|0] = 0 -> v = sa * (0 - 0)/sb - sb*0 = 0
        assert np.allclose(v, 0.0, atol=1e-12)

    def test_matches_monte_carlo(self):
        mix = GaussianMixture(
            np.array([0.3, 0.7]),
            np.array([[1.0, 0.5], [-0.8, -0.2]]),
            np.array([0.25, 0.4]),
        )
        t = 520
        ab = S.abar(t)
        sa, sb = np.sqrt(ab), np.sqrt(1 - ab)
        x_t = np.array([0.2, 0.1])
        rng = np.random.default_rng(7)
        n = 1_000_000
        comp = rng.choice(2, size=n, p=mix.weights)
        x0 = mix.means[comp] + mix.sigmas[comp, None] * rng.standard_normal((n, 2))
        # self-normalized weighting by the forward kernel: p(x_t | x0) is
        # Gaussian with std sb around sa * x0
        log_w = -((x_t[None, :] - sa * x0) ** 2).sum(axis=1) / (2 * sb**2)
        log_w -= log_w.max()
        w = np.exp(log_w)
        w /= w.sum()
        ex0_mc = w @ x0
        v_exact = gaussian_mixture_v(x_t, t, mix, S)
        # recover E[x0] from v: v = sa*(x_t - sa*ex0)/sb - sb*ex0
        #   => ex0 = (sa*x_t/sb - v) / (sa^2/sb + sb)
        ex0_exact = (sa * x_t / sb - v_exact) / (sa**2 / sb + sb)
        rel = np.linalg.norm(ex0_mc - ex0_exact) / max(np.linalg.norm(ex0_exact), 1e-9)
        assert rel < 0.01

    def test_invalid_weights_rejected(self):
        with pytest.raises(ConfigError):
            GaussianMixture(np.array([0.5, 0.4]), np.zeros((2, 2)), np.ones(2))


class TestMseMidpoint:
    def test_two_points(self):
        a, b = np.array([1.0, 2.0]), np.array([3.0, -2.0])
        assert np.allclose(mse_midpoint([a, b]), (a + b) / 2)

    def test_single_point(self):
        a = RNG.standard_normal(4)
        assert np.allclose(mse_midpoint([a]), a)

    def test_matches_gradient_descent_oracle(self):
        pts = [RNG.standard_normal(3) for _ in range(10)]
        m = RNG.standard_normal(3)  # descent on sum ||m - x_i||^2
        for _ in range(3000):
            grad = sum(2.0 * (m - x) for x in pts)
            m = m - 0.01 * grad
        assert np.max(np.abs(mse_midpoint(pts) - m)) < 1e-4

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            mse_midpoint([])


class TestFiniteDataset:
    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(ConfigError):
            FiniteDataset(np.zeros((0, 2)))
        with pytest.raises(ConfigError):
            FiniteDataset(np.array([[np.inf, 0.0]]))
