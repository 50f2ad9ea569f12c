"""Adam update rule and EMA arithmetic."""

import numpy as np
import pytest

from difflab.errors import ConfigError, NumericalError
from difflab.optim import AdamState, adam_step, collect_grads, ema_init, ema_update, zero_grads
from difflab.tensor import Tensor


def make_param(value):
    return {"p": Tensor(np.asarray(value, dtype=np.float32), requires_grad=True)}


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        params = make_param([1.0, -2.0, 3.0])
        state = AdamState(params)
        before = params["p"].data.copy()
        for _ in range(3):
            adam_step(params, {"p": np.zeros(3, dtype=np.float32)}, state, lr=0.1)
        assert np.array_equal(params["p"].data, before)

    def test_first_step_is_minus_lr(self):
        params = make_param([0.0])
        state = AdamState(params)
        adam_step(params, {"p": np.ones(1, dtype=np.float32)}, state, lr=0.1)
        # bias-corrected moments make the first step almost exactly -lr
        assert params["p"].data[0] == pytest.approx(-0.1, abs=1e-6)

    def test_quadratic_bowl_converges(self):
        params = make_param([1.0])
        state = AdamState(params)
        for _ in range(500):
            grad = 2.0 * params["p"].data
            adam_step(params, {"p": grad}, state, lr=0.05)
        assert abs(params["p"].data[0]) < 1e-3

    def test_nan_gradient_aborts(self):
        params = make_param([1.0])
        state = AdamState(params)
        with pytest.raises(NumericalError, match="'p'"):
            adam_step(params, {"p": np.array([np.nan], dtype=np.float32)}, state, lr=0.1)

    def test_collect_and_zero_grads(self):
        params = make_param([1.0, 2.0])
        assert np.all(collect_grads(params)["p"] == 0.0)
        params["p"].grad = np.ones(2, dtype=np.float32)
        assert np.all(collect_grads(params)["p"] == 1.0)
        zero_grads(params)
        assert params["p"].grad is None


class TestEma:
    def test_decay_zero_copies_online(self):
        params = make_param([3.0, -1.0])
        ema = ema_init(make_param([0.0, 0.0]))
        ema_update(ema, params, decay=0.0)
        assert np.allclose(ema["p"], params["p"].data)

    def test_single_update_from_zero(self):
        ema = {"p": np.zeros(1, dtype=np.float32)}
        ema_update(ema, make_param([1.0]), decay=0.9995)
        assert ema["p"][0] == pytest.approx(0.0005, rel=1e-4)

    def test_geometric_series_closed_form(self):
        decay = 0.97
        v = 2.5
        ema = {"p": np.zeros(1, dtype=np.float64)}
        online = {"p": Tensor(np.array([v]), dtype=np.float64)}
        for k in (1, 2, 5, 17):
            steps_done = 0
            ema["p"][:] = 0.0
            for _ in range(k):
                ema_update(ema, online, decay)
                steps_done += 1
            assert ema["p"][0] == pytest.approx(v * (1.0 - decay**k), rel=1e-12)

    def test_invalid_decay_rejected(self):
        with pytest.raises(ConfigError):
            ema_update({"p": np.zeros(1)}, make_param([1.0]), decay=1.0)
