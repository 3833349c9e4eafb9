"""Dense-net substrate: forward/backward against hand evaluation and
finite differences, AdamW against the recurrence worked by hand."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erasure_lab import nn


def quad_loss(net):
    """0.5 * ||w||^2; gradient is w itself (exact for any h)."""
    return 0.5 * float(net.params @ net.params), net.params.copy()


def linear_loss(net):
    return float(net.params.sum()), np.ones(net.parameter_count)


class TestInit:
    def test_same_seed_identical(self):
        a = nn.init_net([4, 16, 2], ["tanh", "identity"], seed=99)
        b = nn.init_net([4, 16, 2], ["tanh", "identity"], seed=99)
        assert np.array_equal(a.params, b.params)

    def test_different_seed_differs(self):
        a = nn.init_net([4, 16, 2], ["tanh", "identity"], seed=1)
        b = nn.init_net([4, 16, 2], ["tanh", "identity"], seed=2)
        assert not np.array_equal(a.params, b.params)

    def test_biases_zero(self):
        net = nn.init_net([5, 8, 3], ["relu", "sigmoid"], seed=0)
        for l in range(2):
            assert np.all(net.bias(l) == 0.0)

    def test_fan_in_scaled_variance(self):
        # 64 -> 64 layer: weight variance should be near 2/64
        net = nn.init_net([64, 64], ["identity"], seed=5)
        var = net.weight(0).ravel().var()
        assert abs(var - 2.0 / 64) / (2.0 / 64) < 0.20

    def test_dimension_errors(self):
        with pytest.raises(nn.DimensionError):
            nn.init_net([4], [], seed=0)
        with pytest.raises(nn.DimensionError):
            nn.init_net([4, 0, 2], ["tanh", "identity"], seed=0)
        with pytest.raises(nn.DimensionError):
            nn.init_net([4, 3, 2], ["tanh"], seed=0)


class TestForward:
    def test_identity_layer_is_identity(self):
        net = nn.init_net([3, 3], ["identity"], seed=0)
        net.params[:] = 0.0
        w = net.weight(0)
        w[:] = np.eye(3)
        x = np.array([0.3, -1.2, 2.5])
        out, _ = nn.forward(net, x)
        assert np.allclose(out, x, atol=0, rtol=0)

    def test_zero_weight_tanh_hits_bias_path(self):
        net = nn.init_net([4, 8, 2], ["tanh", "identity"], seed=3)
        net.params[:] = 0.0
        net.bias(1)[:] = [1.5, -0.5]
        out, _ = nn.forward(net, np.array([3.0, -2.0, 0.1, 5.0]))
        # hidden tanh(0) = 0, so the output is exactly the final bias
        assert np.array_equal(out, [1.5, -0.5])

    def test_two_layer_matches_hand_evaluation(self):
        net = nn.init_net([2, 2, 1], ["tanh", "sigmoid"], seed=0)
        net.weight(0)[:] = [[0.5, -1.0], [2.0, 0.25]]
        net.bias(0)[:] = [0.1, -0.2]
        net.weight(1)[:] = [[1.5], [-0.75]]
        net.bias(1)[:] = [0.05]
        x = np.array([0.4, -0.6])
        # straight-line recomputation with independent arithmetic
        h0 = np.tanh(0.4 * 0.5 + (-0.6) * 2.0 + 0.1)
        h1 = np.tanh(0.4 * (-1.0) + (-0.6) * 0.25 + (-0.2))
        expect = 1.0 / (1.0 + np.exp(-(h0 * 1.5 + h1 * (-0.75) + 0.05)))
        out, _ = nn.forward(net, x)
        assert np.allclose(out[0], expect, rtol=1e-15, atol=0)

    def test_purity(self):
        net = nn.init_net([3, 6, 2], ["tanh", "identity"], seed=4)
        x = np.array([[0.1, 0.2, 0.3]])
        a, _ = nn.forward(net, x)
        b, _ = nn.forward(net, x)
        assert np.array_equal(a, b)

    def test_rejects_bad_input(self):
        net = nn.init_net([3, 2], ["identity"], seed=0)
        with pytest.raises(nn.DimensionError):
            nn.forward(net, np.zeros(4))
        with pytest.raises(ValueError):
            nn.forward(net, np.array([np.nan, 0.0, 0.0]))


class TestBackward:
    def test_linear_layer_gradients(self):
        # y = W x + b: dL/dW = x outer delta, dL/db = delta
        net = nn.init_net([3, 2], ["identity"], seed=8)
        x = np.array([0.5, -1.0, 2.0])
        delta = np.array([0.7, -0.3])
        _, cache = nn.forward(net, x)
        grads, dx = nn.backward(net, cache, delta)
        assert np.allclose(grads[net.w_off[0]:net.w_off[0] + 6].reshape(3, 2),
                           np.outer(x, delta), rtol=1e-15)
        assert np.allclose(grads[net.b_off[0]:net.b_off[0] + 2], delta)
        assert np.allclose(dx[0], net.weight(0) @ delta)

    def test_zero_upstream_zero_grads(self):
        net = nn.init_net([3, 5, 2], ["sigmoid", "identity"], seed=8)
        _, cache = nn.forward(net, np.array([[1.0, 2.0, 3.0]]))
        grads, dx = nn.backward(net, cache, np.zeros((1, 2)))
        assert np.all(grads == 0.0) and np.all(dx == 0.0)

    def test_matches_finite_differences(self):
        net = nn.init_net([4, 10, 8, 3], ["tanh", "sigmoid", "identity"], seed=12)
        rng = np.random.Generator(np.random.PCG64(0))
        x = rng.standard_normal((6, 4))
        target = rng.standard_normal((6, 3))

        def loss_fn(n):
            out, cache = nn.forward(n, x)
            diff = out - target
            g, _ = nn.backward(n, cache, 2.0 * diff / 6.0)
            return float(np.mean(np.sum(diff * diff, axis=1))), g

        assert nn.finite_diff_check(net, loss_fn) < 1e-4

    def test_stale_cache_rejected(self):
        net = nn.init_net([3, 5, 2], ["tanh", "identity"], seed=8)
        _, cache = nn.forward(net, np.ones((4, 3)))
        with pytest.raises(nn.DimensionError):
            nn.backward(net, cache, np.ones((3, 2)))


class TestFiniteDiffCheck:
    def test_quadratic_loss_machine_precision(self):
        net = nn.init_net([3, 4], ["identity"], seed=2)
        assert nn.finite_diff_check(net, quad_loss) < 1e-9

    def test_linear_loss_exact(self):
        net = nn.init_net([3, 4], ["identity"], seed=2)
        assert nn.finite_diff_check(net, linear_loss) < 1e-9

    def test_nonfinite_loss_raises(self):
        net = nn.init_net([2, 2], ["identity"], seed=2)

        def bad(n):
            return float("nan"), np.zeros(n.parameter_count)

        with pytest.raises(ValueError):
            nn.finite_diff_check(net, bad)


class TestAdamW:
    def test_zero_grad_no_decay_unchanged(self):
        net = nn.init_net([3, 4], ["identity"], seed=7)
        before = net.params.copy()
        state = nn.AdamWState.for_net(net, weight_decay=0.0)
        assert nn.adamw_step(net, np.zeros(net.parameter_count), state)
        assert np.array_equal(net.params, before)

    def test_all_false_mask_bitwise_unchanged(self):
        net = nn.init_net([3, 4], ["identity"], seed=7)
        before = net.params.copy()
        state = nn.AdamWState.for_net(net)
        grads = np.full(net.parameter_count, 123.0)
        nn.adamw_step(net, grads, state, mask=np.zeros(net.parameter_count, dtype=bool))
        assert np.array_equal(net.params, before)

    def test_first_step_is_signed_lr(self):
        # t=1 from zero moments: mhat = g, vhat = g^2, update = -lr*sign(g)
        net = nn.init_net([2, 2], ["identity"], seed=7)
        before = net.params.copy()
        state = nn.AdamWState.for_net(net, lr=1e-3, weight_decay=0.0)
        rng = np.random.Generator(np.random.PCG64(3))
        g = rng.standard_normal(net.parameter_count) * 4.0
        nn.adamw_step(net, g, state)
        expect = before - 1e-3 * g / (np.abs(g) + state.eps)
        assert np.allclose(net.params, expect, rtol=1e-12)

    def test_nonfinite_gradient_skips_step(self):
        net = nn.init_net([2, 2], ["identity"], seed=7)
        before = net.params.copy()
        state = nn.AdamWState.for_net(net)
        g = np.ones(net.parameter_count)
        g[3] = np.nan
        assert not nn.adamw_step(net, g, state)
        assert np.array_equal(net.params, before)
        assert state.step == 0

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_masked_parameters_never_move(self, seed):
        rng = np.random.Generator(np.random.PCG64(seed))
        net = nn.init_net([3, 6, 2], ["tanh", "identity"], seed=seed % 1000)
        mask = rng.random(net.parameter_count) < 0.3
        before = net.params.copy()
        state = nn.AdamWState.for_net(net)
        for _ in range(3):
            nn.adamw_step(net, rng.standard_normal(net.parameter_count), state, mask)
        assert np.array_equal(net.params[~mask], before[~mask])
        if mask.any():
            assert not np.array_equal(net.params[mask], before[mask])
