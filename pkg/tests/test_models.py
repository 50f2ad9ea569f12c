"""Denoiser models: contracts, taps, freezing, checkpoints, full grad check."""

import numpy as np
import pytest

from difflab.errors import ConfigError, ContractError, DimensionError
from difflab.models import (
    Conditioning,
    FeatureTap,
    Mlp2d,
    TinyUnet,
    freeze_copy,
    load_model,
    save_model,
    time_embedding,
)
from difflab.objectives import SpConfig, sp_loss
from difflab.optim import AdamState, adam_step, collect_grads, zero_grads
from difflab.schedule import build_zero_snr_schedule
from difflab.tensor import Tape, Tensor, backward, mse_reduce

from util import fd_grad, max_rel_err

RNG = np.random.default_rng(77)
S = build_zero_snr_schedule()


def mlp(**kw):
    args = dict(num_classes=8, hidden=32, time_dim=8, class_dim=4, seed=3)
    args.update(kw)
    return Mlp2d(**args)


def unet(**kw):
    args = dict(num_classes=4, image_size=8, widths=(4, 8, 16), time_dim=8, groups=2, seed=4)
    args.update(kw)
    return TinyUnet(**args)


class TestTimeEmbedding:
    def test_deterministic(self):
        assert np.array_equal(time_embedding(17, 32).data, time_embedding(17, 32).data)

    def test_norm_is_half_dim(self):
        for t in (1, 500, 1000):
            e = time_embedding(t, 64).data
            assert abs(np.sum(e**2) - 32.0) < 1e-4

    def test_endpoints_differ(self):
        dim = 64
        d = np.linalg.norm(time_embedding(1, dim).data - time_embedding(1000, dim).data)
        assert d > 0.1 * np.sqrt(dim)

    def test_odd_dim_rejected(self):
        with pytest.raises(ConfigError):
            time_embedding(1, 33)


class TestForwardContracts:
    @pytest.mark.parametrize("make,shape", [(mlp, (5, 2)), (unet, (3, 1, 8, 8))])
    def test_output_shape_matches_input(self, make, shape):
        m = make()
        x = Tensor(RNG.standard_normal(shape).astype(np.float32))
        c = Conditioning.of(RNG.integers(0, m.num_classes, shape[0]))
        assert m.forward(x, 500, c).shape == shape

    @pytest.mark.parametrize("make,shape", [(mlp, (5, 2)), (unet, (3, 1, 8, 8))])
    def test_zero_final_layer_outputs_zero(self, make, shape):
        m = make(zero_init_final=True)
        x = Tensor(RNG.standard_normal(shape).astype(np.float32))
        out = m.forward(x, 123, Conditioning.null(shape[0]))
        assert np.all(out.data == 0.0)

    def test_forward_deterministic(self):
        m = unet()
        x = Tensor(RNG.standard_normal((2, 1, 8, 8)).astype(np.float32))
        c = Conditioning.of([1, 3])
        a = m.forward(x, 700, c)
        b = m.forward(x, 700, c)
        assert np.array_equal(a.data, b.data)

    def test_t_out_of_range_rejected(self):
        m = mlp()
        x = Tensor(np.zeros((1, 2), dtype=np.float32))
        with pytest.raises(ContractError):
            m.forward(x, 0, Conditioning.null(1))
        with pytest.raises(ContractError):
            m.forward(x, 1001, Conditioning.null(1))

    def test_wrong_input_shape_rejected(self):
        with pytest.raises(DimensionError):
            unet().forward(Tensor(np.zeros((2, 1, 4, 4), np.float32)), 5, Conditioning.null(2))

    def test_bad_class_id_rejected(self):
        m = mlp(num_classes=3)
        x = Tensor(np.zeros((1, 2), dtype=np.float32))
        with pytest.raises(ContractError):
            m.forward(x, 5, Conditioning.of([3]))

    def test_null_conditioning_differs_from_classes(self):
        m = mlp(zero_init_final=False)
        x = Tensor(RNG.standard_normal((1, 2)).astype(np.float32))
        null_out = m.forward(x, 400, Conditioning.null(1)).data
        outs = [m.forward(x, 400, Conditioning.of([k])).data for k in range(8)]
        assert all(not np.allclose(null_out, o) for o in outs)

    def test_per_element_timesteps(self):
        m = mlp(zero_init_final=False)
        x = Tensor(RNG.standard_normal((3, 2)).astype(np.float32))
        c = Conditioning.null(3)
        batched = m.forward(x, np.array([10, 500, 990]), c).data
        for i, t in enumerate((10, 500, 990)):
            single = m.forward(Tensor(x.data[i : i + 1]), t, Conditioning.null(1)).data
            assert np.allclose(batched[i], single[0], atol=1e-6)


class TestFeatureTaps:
    def test_unet_tap_counts_and_resolution(self):
        m = unet()
        x = Tensor(RNG.standard_normal((2, 1, 8, 8)).astype(np.float32))
        c = Conditioning.null(2)
        _, mid = m.forward_with_features(x, 100, c, FeatureTap.MID_ONLY)
        assert len(mid) == 1
        assert mid[0].shape == (2, 16, 2, 2)  # lowest spatial resolution
        _, enc = m.forward_with_features(x, 100, c, FeatureTap.ENCODER_ALL)
        assert len(enc) == 2
        _, dec = m.forward_with_features(x, 100, c, FeatureTap.DECODER_ALL)
        assert len(dec) == 2
        _, both = m.forward_with_features(x, 100, c, FeatureTap.ENCODER_PLUS_MID)
        assert len(both) == 3

    def test_mlp_tap_convention(self):
        m = mlp()
        x = Tensor(RNG.standard_normal((2, 2)).astype(np.float32))
        c = Conditioning.null(2)
        _, mid = m.forward_with_features(x, 100, c, FeatureTap.MID_ONLY)
        _, enc = m.forward_with_features(x, 100, c, FeatureTap.ENCODER_ALL)
        assert len(mid) == 1 and len(enc) == 2
        assert np.array_equal(mid[0].data, enc[1].data)  # mid is layer 2

    def test_features_deterministic(self):
        m = unet()
        x = Tensor(RNG.standard_normal((1, 1, 8, 8)).astype(np.float32))
        c = Conditioning.of([2])
        _, f1 = m.forward_with_features(x, 42, c, FeatureTap.ENCODER_PLUS_MID)
        _, f2 = m.forward_with_features(x, 42, c, FeatureTap.ENCODER_PLUS_MID)
        for a, b in zip(f1, f2):
            assert np.array_equal(a.data, b.data)


class TestFreezeCopy:
    def test_frozen_matches_source_forward(self):
        m = mlp(zero_init_final=False)
        frozen = freeze_copy(m)
        x = Tensor(RNG.standard_normal((4, 2)).astype(np.float32))
        c = Conditioning.of([0, 1, 2, 3])
        assert np.array_equal(m.forward(x, 300, c).data, frozen.forward(x, 300, c).data)
        assert all(not p.requires_grad for p in frozen.parameters().values())

    def test_training_leaves_frozen_bit_identical(self):
        m = mlp(zero_init_final=False)
        frozen = freeze_copy(m)
        snapshot = {k: p.data.copy() for k, p in frozen.parameters().items()}
        x0 = Tensor(RNG.standard_normal((8, 2)).astype(np.float32))
        c = Conditioning.of(RNG.integers(0, 8, 8))
        state = AdamState(m.parameters())
        rng = np.random.default_rng(0)
        for _ in range(3):
            with Tape() as tape:
                res = sp_loss(m, frozen, x0, c, rng, S, SpConfig())
            backward(res.loss, tape)
            adam_step(m.parameters(), collect_grads(m.parameters()), state, lr=1e-3)
            zero_grads(m.parameters())
        for k, p in frozen.parameters().items():
            assert np.array_equal(p.data, snapshot[k])
            assert p.grad is None

    def test_gradient_flows_through_frozen_to_online(self):
        m = mlp(zero_init_final=False)
        frozen = freeze_copy(m)
        x0 = Tensor(RNG.standard_normal((8, 2)).astype(np.float32))
        c = Conditioning.of(RNG.integers(0, 8, 8))
        rng = np.random.default_rng(1)
        with Tape() as tape:
            res = sp_loss(m, frozen, x0, c, rng, S, SpConfig())
        backward(res.loss, tape)
        grads = collect_grads(m.parameters())
        assert any(np.abs(g).max() > 0 for g in grads.values())


class TestCheckpoints:
    @pytest.mark.parametrize("make,shape", [(mlp, (3, 2)), (unet, (2, 1, 8, 8))])
    def test_round_trip_bit_exact(self, tmp_path, make, shape):
        m = make(zero_init_final=False)
        path = str(tmp_path / "model.ckpt")
        save_model(m, path)
        loaded = load_model(path)
        for k, p in m.parameters().items():
            assert np.array_equal(p.data, loaded.parameters()[k].data)
        x = Tensor(RNG.standard_normal(shape).astype(np.float32))
        c = Conditioning.of(RNG.integers(0, m.num_classes, shape[0]))
        assert np.array_equal(m.forward(x, 77, c).data, loaded.forward(x, 77, c).data)

    def test_param_count_fixed_after_construction(self):
        m = unet()
        n = m.num_params()
        x = Tensor(RNG.standard_normal((1, 1, 8, 8)).astype(np.float32))
        m.forward(x, 5, Conditioning.null(1))
        assert m.num_params() == n


class TestFullModelGradients:
    """Whole-network reverse-mode gradients vs central finite differences."""

    def test_mlp_all_params(self):
        m = Mlp2d(num_classes=3, hidden=8, time_dim=4, class_dim=2, seed=9,
                  zero_init_final=False, dtype=np.float64)
        x0 = Tensor(RNG.standard_normal((4, 2)), dtype=np.float64)
        target = Tensor(RNG.standard_normal((4, 2)), dtype=np.float64)
        c = Conditioning.of([0, 1, 2, 0])

        def loss_value():
            return mse_reduce(m.forward(x0, np.array([5, 400, 800, 1000]), c), target).item()

        with Tape() as tape:
            loss = mse_reduce(m.forward(x0, np.array([5, 400, 800, 1000]), c), target)
        backward(loss, tape)
        for name, p in m.parameters().items():
            expected = fd_grad(loss_value, p.data)
            assert max_rel_err(p.grad, expected) < 1e-3, name

    def test_unet_all_params(self):
        m = TinyUnet(num_classes=2, image_size=8, widths=(2, 4, 8), time_dim=4, groups=2,
                     seed=10, zero_init_final=False, dtype=np.float64)
        x0 = Tensor(RNG.standard_normal((2, 1, 8, 8)), dtype=np.float64)
        target = Tensor(RNG.standard_normal((2, 1, 8, 8)), dtype=np.float64)
        c = Conditioning.of([0, 1])

        def loss_value():
            return mse_reduce(m.forward(x0, np.array([100, 900]), c), target).item()

        with Tape() as tape:
            loss = mse_reduce(m.forward(x0, np.array([100, 900]), c), target)
        backward(loss, tape)
        for name, p in m.parameters().items():
            expected = fd_grad(loss_value, p.data)
            assert max_rel_err(p.grad, expected) < 1e-3, name
