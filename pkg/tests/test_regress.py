import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from sarcolor.dataio import RasterPatch
from sarcolor.regress import (LinearModel, MlpModel, apply_lr, apply_nl, fit_lr,
                              fit_nl, load_model, lr_loss, nocol, save_model, tansig)


class TestNocol:
    def test_bands_replicated(self, rng):
        sar = RasterPatch(rng.random((1, 8, 8)).astype(np.float32))
        out = nocol(sar)
        assert out.channels == 3
        for b in range(3):
            np.testing.assert_array_equal(out.data[b], sar.data[0])

    def test_zero_interband_difference(self, rng):
        out = nocol(RasterPatch(rng.random((1, 4, 4)).astype(np.float32)))
        assert np.all(out.data[0] - out.data[1] == 0)
        assert np.all(out.data[1] - out.data[2] == 0)

    def test_rejects_multiband(self, rng):
        with pytest.raises(ValueError):
            nocol(RasterPatch(rng.random((3, 4, 4)).astype(np.float32)))


class TestFitLr:
    def test_exact_linear_with_bias(self, rng):
        x = rng.uniform(-5, 5, 200)
        y = np.stack([2.0 * x + 3.0] * 3, axis=1)
        model = fit_lr(x, y, with_bias=True)
        np.testing.assert_allclose(model.weights, 2.0, atol=1e-9)
        np.testing.assert_allclose(model.biases, 3.0, atol=1e-9)

    def test_no_bias_matches_oracle_and_is_worse(self, rng):
        x = rng.uniform(0.5, 5, 500)
        y = np.stack([2.0 * x + 3.0 + 0.1 * rng.standard_normal(500) for _ in range(3)], axis=1)
        nb = fit_lr(x, y, with_bias=False)
        assert np.all(nb.biases == 0.0)
        for b in range(3):
            assert nb.weights[b] == pytest.approx(
                oracles.lr_no_bias_oracle(x, y[:, b]), rel=1e-9)
        wb = fit_lr(x, y, with_bias=True)
        assert lr_loss(wb, x, y) < lr_loss(nb, x, y)

    def test_standardized_negative_slope(self, rng):
        x = rng.standard_normal(1000)
        x = (x - x.mean()) / x.std()
        y = np.stack([-x] * 3, axis=1)
        model = fit_lr(x, y)
        np.testing.assert_allclose(model.weights, -1.0, atol=1e-9)
        np.testing.assert_allclose(model.biases, y.mean(axis=0), atol=1e-9)

    def test_degenerate_x(self):
        with pytest.raises(ValueError, match="degenerate x"):
            fit_lr(np.ones(10), np.ones((10, 3)))

    def test_fit_is_local_minimum(self, rng):
        x = rng.uniform(-2, 2, 300)
        y = np.stack([1.5 * x - 0.5 + 0.2 * rng.standard_normal(300) for _ in range(3)], axis=1)
        model = fit_lr(x, y)
        base = lr_loss(model, x, y)
        for i in range(3):
            for dw in (-1e-3, 1e-3):
                bumped = LinearModel(model.weights.copy(), model.biases.copy())
                bumped.weights[i] += dw
                assert lr_loss(bumped, x, y) >= base
                bumped = LinearModel(model.weights.copy(), model.biases.copy())
                bumped.biases[i] += dw
                assert lr_loss(bumped, x, y) >= base

    def test_bias_never_worse_property(self):
        for seed in range(25):
            r = np.random.default_rng(seed)
            x = r.uniform(-3, 3, 120) + r.uniform(-2, 2)
            y = r.standard_normal((120, 3)) * r.uniform(0.1, 2) + r.uniform(-5, 5)
            assert (lr_loss(fit_lr(x, y, True), x, y)
                    <= lr_loss(fit_lr(x, y, False), x, y) + 1e-12)


class TestApplyLr:
    def test_identity_coefficients_equal_nocol(self, rng):
        sar = RasterPatch(rng.random((1, 6, 6)).astype(np.float32))
        model = LinearModel(np.ones(3), np.zeros(3))
        np.testing.assert_allclose(apply_lr(model, sar).data, nocol(sar).data, rtol=1e-7)

    def test_zero_weights_constant_bands(self, rng):
        sar = RasterPatch(rng.random((1, 6, 6)).astype(np.float32))
        model = LinearModel(np.zeros(3), np.array([1.0, 2.0, 3.0]))
        out = apply_lr(model, sar)
        for b, c in enumerate((1.0, 2.0, 3.0)):
            assert np.all(out.data[b] == c)

    def test_fit_then_apply_reproduces_targets(self, rng):
        sar = RasterPatch((rng.random((1, 16, 16)) * 4096).astype(np.float32))
        x = sar.data.ravel().astype(np.float64)
        y = np.stack([0.5 * x + 100, 2.0 * x - 7, -0.3 * x + 900], axis=1)
        model = fit_lr(x, y)
        out = apply_lr(model, sar)
        np.testing.assert_allclose(out.data.reshape(3, -1).T, y, rtol=1e-6)


class TestTansig:
    def test_zero(self):
        assert tansig(0.0) == 0.0

    def test_saturation(self):
        assert tansig(20.0) > 1 - 1e-8

    def test_reference_value(self):
        assert tansig(1.0) == pytest.approx(0.76159416, abs=1e-7)

    def test_matches_logistic_form(self, rng):
        x = rng.uniform(-10, 10, 100)
        np.testing.assert_allclose(tansig(x), 2.0 / (1.0 + np.exp(-2.0 * x)) - 1.0,
                                   rtol=1e-14, atol=1e-15)

    @given(st.floats(-10, 10, allow_nan=False))
    def test_odd_exact(self, x):
        assert tansig(-x) == -tansig(x)


def planted_two_unit_net(seed=1001):
    prng = np.random.default_rng(seed)
    w1 = prng.uniform(-1.5, 1.5, (2, 1))
    b1 = prng.uniform(-1, 1, 2)
    w2 = prng.uniform(-1.5, 1.5, (3, 2))
    b2 = prng.uniform(-1, 1, 3)

    def f(x):
        a = tansig(x[:, None] @ w1.T + b1)
        return a @ w2.T + b2

    return f, prng


class TestFitNl:
    def test_recovers_planted_network(self):
        f, prng = planted_two_unit_net()
        x = prng.uniform(-3, 3, 2000)
        model = fit_nl(x, f(x), [2], seed=0)
        grid = np.linspace(-3, 3, 201)
        assert np.abs(model.predict(grid) - f(grid)).max() < 1e-3

    def test_matches_lr_on_linear_targets(self, rng):
        x = rng.uniform(-2, 2, 2000)
        y = np.stack([2 * x + 3 + 0.1 * rng.standard_normal(2000) for _ in range(3)], axis=1)
        lr = fit_lr(x, y)
        model = fit_nl(x, y, [2], seed=0)
        mlp_loss = float(((model.predict(x) - y) ** 2).mean())
        assert mlp_loss == pytest.approx(lr_loss(lr, x, y), rel=0.01)

    def test_hidden_grid_bounds(self, rng):
        x = rng.uniform(-1, 1, 300)
        y = rng.standard_normal((300, 3))
        fit_nl(x, y, [1, 3, 1], seed=0, max_iter=3)  # accepted
        with pytest.raises(ValueError, match="hidden layer count"):
            fit_nl(x, y, [1, 1, 1, 1], seed=0)

    def test_accepted_steps_never_increase_loss(self, rng):
        f, prng = planted_two_unit_net(1002)
        x = prng.uniform(-3, 3, 500)
        model = fit_nl(x, f(x) + 0.05 * prng.standard_normal((500, 3)), [2], seed=3)
        hist = model.lm.loss_history
        assert len(hist) >= 2
        assert all(b < a for a, b in zip(hist, hist[1:]))

    def test_final_loss_not_above_initial(self, rng):
        x = rng.uniform(-2, 2, 400)
        y = rng.standard_normal((400, 3))
        model = fit_nl(x, y, [3], seed=0)
        assert model.lm.loss_history[-1] <= model.lm.loss_history[0]

    def test_deterministic(self, rng):
        x = rng.uniform(-2, 2, 400)
        y = np.tanh(x)[:, None] * np.array([1.0, 2.0, 3.0])
        m1 = fit_nl(x, y, [2], seed=7)
        m2 = fit_nl(x, y, [2], seed=7)
        assert m1.lm.loss_history == m2.lm.loss_history
        for w1, w2 in zip(m1.weights, m2.weights):
            np.testing.assert_array_equal(w1, w2)

    def test_too_few_samples(self):
        with pytest.raises(ValueError, match="samples"):
            fit_nl(np.arange(5.0), np.zeros((5, 3)), [2], seed=0)


class TestApplyNl:
    def test_zero_weight_model_constant_bands(self):
        sizes = [1, 2, 3]
        weights = [np.zeros((2, 1)), np.zeros((3, 2))]
        biases = [np.zeros(2), np.array([4.0, 5.0, 6.0])]
        model = MlpModel(sizes, weights, biases)
        out = apply_nl(model, RasterPatch(np.random.default_rng(0)
                                          .random((1, 4, 4)).astype(np.float32)))
        for b, c in enumerate((4.0, 5.0, 6.0)):
            assert np.all(out.data[b] == c)

    def test_deterministic_application(self, rng):
        f, prng = planted_two_unit_net(1003)
        x = prng.uniform(-3, 3, 400)
        model = fit_nl(x, f(x), [2], seed=0)
        sar = RasterPatch(rng.random((1, 8, 8)).astype(np.float32))
        out1 = apply_nl(model, sar)
        out2 = apply_nl(model, sar)
        np.testing.assert_array_equal(out1.data, out2.data)


class TestModelSerialization:
    def test_lr_round_trip(self, rng, tmp_path):
        model = fit_lr(rng.uniform(-1, 1, 50), rng.standard_normal((50, 3)))
        save_model(model, tmp_path / "m.scm", seed=3)
        again = load_model(tmp_path / "m.scm")
        np.testing.assert_array_equal(again.weights, model.weights)
        np.testing.assert_array_equal(again.biases, model.biases)
        assert again.with_bias == model.with_bias

    def test_nl_round_trip_bit_exact_prediction(self, rng, tmp_path):
        f, prng = planted_two_unit_net(1004)
        x = prng.uniform(-3, 3, 300)
        model = fit_nl(x, f(x), [2], seed=1)
        save_model(model, tmp_path / "m.scm")
        again = load_model(tmp_path / "m.scm")
        grid = np.linspace(-3, 3, 100)
        np.testing.assert_array_equal(again.predict(grid), model.predict(grid))

    def test_nocol_round_trip(self, tmp_path):
        save_model("nocol", tmp_path / "m.scm")
        assert load_model(tmp_path / "m.scm") == "nocol"
