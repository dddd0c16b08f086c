import math

import numpy as np
import pytest

from sarcolor.autodiff import (Adam, AdamState, Tensor4, adam_step, add, backward,
                               batchnorm2d, bce_with_logits, concat_channels, conv2d,
                               conv_transpose2d, gradcheck, l1_loss, leaky_relu,
                               mse_loss, no_grad, relu, run_gradcheck_suite, scale,
                               sigmoid, tanh, weighted_sum)


def t(rng, *shape, grad=False):
    return Tensor4(rng.standard_normal(shape), requires_grad=grad)


class TestConvShapes:
    def test_stride2_shape(self, rng):
        out = conv2d(t(rng, 8, 1, 64, 64), t(rng, 64, 1, 4, 4), stride=2, pad=1)
        assert out.shape == (8, 64, 32, 32)

    def test_identity_kernel(self, rng):
        x = t(rng, 2, 3, 5, 5)
        k = np.zeros((3, 3, 1, 1))
        for c in range(3):
            k[c, c, 0, 0] = 1.0
        out = conv2d(x, Tensor4(k), stride=1, pad=0)
        np.testing.assert_array_equal(out.data, x.data)

    def test_non_integral_output_rejected(self, rng):
        with pytest.raises(ValueError, match="non-integral"):
            conv2d(t(rng, 1, 1, 63, 63), t(rng, 8, 1, 4, 4), stride=2, pad=1)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ValueError, match="channel mismatch"):
            conv2d(t(rng, 1, 2, 8, 8), t(rng, 4, 3, 3, 3), stride=1, pad=1)

    def test_transpose_shape(self, rng):
        out = conv_transpose2d(t(rng, 8, 512, 2, 2), t(rng, 512, 256, 4, 4),
                               stride=2, pad=1)
        assert out.shape == (8, 256, 4, 4)

    def test_transpose_zero_input_gives_bias(self, rng):
        x = Tensor4(np.zeros((2, 3, 4, 4)))
        k = t(rng, 3, 5, 4, 4)
        b = t(rng, 1, 5, 1, 1)
        out = conv_transpose2d(x, k, b, stride=2, pad=1)
        np.testing.assert_allclose(out.data, np.broadcast_to(b.data, out.shape))


class TestAdjoint:
    def test_conv_transpose_is_adjoint(self, rng):
        for _ in range(5):
            x = t(rng, 2, 3, 6, 6)
            k = t(rng, 4, 3, 4, 4)
            y = t(rng, 2, 4, 3, 3)
            lhs = float((conv2d(x, k, stride=2, pad=1).data * y.data).sum())
            rhs = float((x.data * conv_transpose2d(y, k, stride=2, pad=1).data).sum())
            assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_adjoint_other_geometry(self, rng):
        x = t(rng, 1, 2, 7, 7)
        k = t(rng, 3, 2, 3, 3)
        y = t(rng, 1, 3, 7, 7)
        lhs = float((conv2d(x, k, stride=1, pad=1).data * y.data).sum())
        rhs = float((x.data * conv_transpose2d(y, k, stride=1, pad=1).data).sum())
        assert lhs == pytest.approx(rhs, rel=1e-10)


class TestBatchnorm:
    def test_train_normalizes_to_beta_gamma(self, rng):
        x = t(rng, 4, 3, 8, 8)
        gamma = Tensor4(np.full((1, 3, 1, 1), 2.0))
        beta = Tensor4(np.full((1, 3, 1, 1), 5.0))
        out = batchnorm2d(x, gamma, beta, np.zeros(3), np.ones(3), training=True)
        mean = out.data.mean(axis=(0, 2, 3))
        std = out.data.std(axis=(0, 2, 3))
        np.testing.assert_allclose(mean, 5.0, atol=1e-3)
        np.testing.assert_allclose(std, 2.0, atol=1e-3)

    def test_eval_pure_affine_deterministic(self, rng):
        x = t(rng, 2, 3, 4, 4)
        gamma = t(rng, 1, 3, 1, 1)
        beta = t(rng, 1, 3, 1, 1)
        rm = rng.standard_normal(3)
        rv = np.abs(rng.standard_normal(3)) + 0.5
        out1 = batchnorm2d(x, gamma, beta, rm, rv, training=False)
        out2 = batchnorm2d(x, gamma, beta, rm, rv, training=False)
        np.testing.assert_array_equal(out1.data, out2.data)

    def test_identity_on_normalized_input(self, rng):
        x_data = rng.standard_normal((8, 2, 16, 16))
        x_data = (x_data - x_data.mean(axis=(0, 2, 3), keepdims=True))
        x_data /= x_data.std(axis=(0, 2, 3), keepdims=True)
        out = batchnorm2d(Tensor4(x_data), Tensor4(np.ones((1, 2, 1, 1))),
                          Tensor4(np.zeros((1, 2, 1, 1))), np.zeros(2), np.ones(2),
                          training=True)
        np.testing.assert_allclose(out.data, x_data, atol=1e-4)

    def test_running_stats_updated(self, rng):
        x = t(rng, 4, 2, 8, 8)
        rm, rv = np.zeros(2), np.ones(2)
        batchnorm2d(x, Tensor4(np.ones((1, 2, 1, 1))), Tensor4(np.zeros((1, 2, 1, 1))),
                    rm, rv, training=True)
        expected_m = 0.1 * x.data.mean(axis=(0, 2, 3))
        np.testing.assert_allclose(rm, expected_m, rtol=1e-6)

    def test_degenerate_statistics_rejected(self, rng):
        x = t(rng, 1, 3, 1, 1)
        with pytest.raises(ValueError, match="degenerate batchnorm"):
            batchnorm2d(x, Tensor4(np.ones((1, 3, 1, 1))), Tensor4(np.zeros((1, 3, 1, 1))),
                        np.zeros(3), np.ones(3), training=True)


class TestActivationsAndLosses:
    def test_leaky_relu_value(self):
        out = leaky_relu(Tensor4(np.full((1, 1, 1, 1), -1.0)), 0.2)
        assert out.data.reshape(()) == pytest.approx(-0.2)

    def test_tanh_zero(self):
        assert tanh(Tensor4(np.zeros((1, 1, 1, 1)))).data.reshape(()) == 0.0

    def test_relu_idempotent(self, rng):
        x = t(rng, 2, 2, 3, 3)
        once = relu(x)
        twice = relu(once)
        np.testing.assert_array_equal(once.data, twice.data)

    def test_sigmoid_range_and_value(self, rng):
        x = t(rng, 1, 1, 4, 4)
        s = sigmoid(x).data
        assert np.all((s > 0) & (s < 1))
        assert sigmoid(Tensor4(np.zeros((1, 1, 1, 1)))).data.reshape(()) == 0.5

    def test_concat_shapes(self, rng):
        out = concat_channels(t(rng, 2, 64, 4, 4), t(rng, 2, 64, 4, 4))
        assert out.shape == (2, 128, 4, 4)
        with pytest.raises(ValueError, match="concat shape mismatch"):
            concat_channels(t(rng, 2, 3, 4, 4), t(rng, 2, 3, 5, 5))

    def test_l1_self_zero(self, rng):
        x = t(rng, 2, 3, 4, 4)
        assert l1_loss(x, x).item() == 0.0

    def test_bce_ln2(self):
        z = Tensor4(np.zeros((1, 1, 3, 3)))
        assert bce_with_logits(z, 1).item() == pytest.approx(math.log(2), rel=1e-12)
        assert bce_with_logits(z, 0).item() == pytest.approx(math.log(2), rel=1e-12)

    def test_bce_stable_at_large_logits(self):
        z = Tensor4(np.full((1, 1, 1, 1), 500.0))
        assert bce_with_logits(z, 1).item() == pytest.approx(0.0, abs=1e-12)
        assert np.isfinite(bce_with_logits(z, 0).item())


class TestBackward:
    def test_sum_gradient_ones(self, rng):
        x = t(rng, 2, 3, 4, 4, grad=True)
        backward(weighted_sum(x, np.ones_like(x.data)))
        np.testing.assert_array_equal(x.grad, np.ones_like(x.data))

    def test_half_norm_gradient_is_x(self, rng):
        x = t(rng, 1, 2, 3, 3, grad=True)
        loss = scale(mse_loss(x, Tensor4(np.zeros_like(x.data))), x.data.size / 2.0)
        backward(loss)
        np.testing.assert_allclose(x.grad, x.data, rtol=1e-12)

    def test_gradients_accumulate_on_reuse(self, rng):
        x = t(rng, 1, 1, 2, 2, grad=True)
        w = np.ones_like(x.data)
        loss = add(weighted_sum(x, w), weighted_sum(x, w))
        backward(loss)
        np.testing.assert_array_equal(x.grad, 2.0 * w)

    def test_backward_twice_errors(self, rng):
        x = t(rng, 1, 1, 2, 2, grad=True)
        loss = weighted_sum(x, np.ones_like(x.data))
        backward(loss)
        with pytest.raises(RuntimeError, match="backward already ran"):
            backward(loss)

    def test_composite_gradcheck(self, rng):
        for seed in range(3):
            r = np.random.default_rng(seed)
            x = Tensor4(r.standard_normal((2, 3, 8, 8)), requires_grad=True)
            k1 = Tensor4(r.standard_normal((4, 3, 4, 4)) * 0.3, requires_grad=True)
            b1 = Tensor4(r.standard_normal((1, 4, 1, 1)) * 0.1, requires_grad=True)
            k2 = Tensor4(r.standard_normal((4, 2, 4, 4)) * 0.3, requires_grad=True)
            target = Tensor4(r.standard_normal((2, 2, 8, 8)))

            def fn(x, k1, b1, k2):
                h = conv2d(x, k1, b1, stride=2, pad=1)
                h = leaky_relu(h, 0.2)
                h = tanh(h)
                h = conv_transpose2d(h, k2, stride=2, pad=1)
                return add(l1_loss(h, target),
                           scale(bce_with_logits(h, 1), 0.5))

            assert gradcheck(fn, [x, k1, b1, k2]) <= 0.0

    def test_no_grad_blocks_graph(self, rng):
        x = t(rng, 1, 1, 2, 2, grad=True)
        with no_grad():
            out = scale(x, 2.0)
        assert out.requires_grad is False
        assert out._parents == ()

    def test_detach_cuts_graph(self, rng):
        x = t(rng, 1, 1, 2, 2, grad=True)
        y = scale(x, 3.0).detach()
        loss = weighted_sum(y, np.ones_like(y.data))
        backward(loss)
        assert x.grad is None


class TestAdam:
    def test_zero_gradients_leave_params_unchanged(self, rng):
        p = t(rng, 1, 2, 2, 2, grad=True)
        before = p.data.copy()
        state = AdamState(lr=0.1)
        p.grad = np.zeros_like(p.data)
        for _ in range(3):
            adam_step([p], state)
        np.testing.assert_array_equal(p.data, before)

    def test_descends_quadratic(self, rng):
        p = Tensor4(np.full((1, 1, 1, 1), 5.0), requires_grad=True)
        opt = Adam([p], lr=0.1)
        for _ in range(200):
            loss = mse_loss(p, Tensor4(np.zeros_like(p.data)))
            backward(loss)
            opt.step()
            opt.zero_grad()
        assert abs(p.data.reshape(())) < 0.5

    def test_bias_correction_first_step(self, rng):
        p = Tensor4(np.zeros((1, 1, 1, 1)), requires_grad=True)
        p.grad = np.full((1, 1, 1, 1), 0.3)
        state = AdamState(lr=0.01)
        adam_step([p], state)
        # first bias-corrected step has magnitude ~lr regardless of grad scale
        assert p.data.reshape(()) == pytest.approx(-0.01, rel=1e-4)


class TestDeterminism:
    def test_forward_backward_bit_identical(self):
        def run():
            r = np.random.default_rng(99)
            x = Tensor4(r.standard_normal((2, 1, 8, 8)).astype(np.float32), requires_grad=True)
            k = Tensor4(r.standard_normal((4, 1, 4, 4)).astype(np.float32) * 0.1,
                        requires_grad=True)
            out = conv2d(x, k, stride=2, pad=1)
            loss = l1_loss(out, Tensor4(np.zeros_like(out.data)))
            backward(loss)
            return loss.item(), x.grad.copy(), k.grad.copy()

        l1a, xa, ka = run()
        l1b, xb, kb = run()
        assert l1a == l1b
        np.testing.assert_array_equal(xa, xb)
        np.testing.assert_array_equal(ka, kb)


class TestOperatorSuite:
    def test_all_ops_pass_three_seeds(self):
        for seed in range(3):
            for name, excess in run_gradcheck_suite(seed=seed):
                assert excess <= 0.0, f"{name} failed gradcheck at seed {seed}"
