import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuralmerton.policy_net import (PolicyParams, backward, forward, init_params, param_count, silu,
                                     silu_grad, validate_arch)


def random_params(arch, seed, scale=0.5, y_scale=1.0):
    rng = np.random.default_rng(seed)
    return PolicyParams.from_flat(arch, scale * rng.standard_normal(param_count(arch)), y_scale)


class TestActivation:
    def test_values(self):
        assert silu(0.0) == 0.0
        assert silu(1.0) == pytest.approx(0.731059, abs=1e-6)
        assert silu(1.0) == pytest.approx(1 / (1 + np.exp(-1.0)), rel=1e-15)
        assert silu(50.0) == pytest.approx(50.0, rel=1e-15)

    def test_large_negative_is_finite(self):
        assert abs(silu(-800.0)) < 1e-300

    def test_derivative_matches_differences(self):
        x = np.linspace(-6, 6, 49)
        h = 1e-6
        np.testing.assert_allclose(silu_grad(x), (silu(x + h) - silu(x - h)) / (2 * h), atol=1e-8)


class TestArchitecture:
    @pytest.mark.parametrize("arch,count", [((2, 3, 1), 13), ((2, 5, 1), 21), ((2, 1), 3), ((2, 4, 4, 1), 37)])
    def test_param_count(self, arch, count):
        assert param_count(arch) == count

    @pytest.mark.parametrize("arch", [(2,), (3, 1), (2, 3, 2), (2, 0, 1)])
    def test_rejects(self, arch):
        with pytest.raises(ValueError):
            validate_arch(arch)

    def test_wrong_flat_length(self):
        with pytest.raises(ValueError):
            PolicyParams.from_flat((2, 3, 1), np.zeros(12))

    def test_wrong_layer_shape(self):
        p = PolicyParams.zeros((2, 3, 1))
        with pytest.raises(ValueError):
            PolicyParams(p.arch, [np.zeros((3, 3)), p.weights[1]], p.biases)


class TestForward:
    @pytest.mark.invariant
    def test_zero_network(self):
        theta = PolicyParams.zeros((2, 5, 1))
        t, y = np.meshgrid(np.linspace(0, 1, 7), np.linspace(0, 0.3, 5))
        np.testing.assert_array_equal(forward(theta, t, y), 0.0)

    def test_constant_output(self):
        theta = random_params((2, 3, 1), 0)
        theta.weights[1][:] = 0.0
        theta.biases[1][:] = 0.7
        np.testing.assert_array_equal(forward(theta, np.linspace(0, 1, 9), 0.04), 0.7)

    def test_single_affine_layer(self):
        theta = PolicyParams.from_flat((2, 1), [2.0, -3.0, 0.5], y_scale=0.1)
        assert forward(theta, 0.5, 0.2, horizon=2.0) == pytest.approx(2.0 * 0.25 - 3.0 * 2.0 + 0.5)

    def test_shape_broadcast(self):
        theta = random_params((2, 3, 1), 1)
        assert forward(theta, np.zeros((4, 6)), 0.03).shape == (4, 6)

    def test_manual_two_layer(self):
        theta = random_params((2, 3, 1), 2)
        x = np.array([0.3, 0.05])
        h = silu(theta.weights[0] @ x + theta.biases[0])
        expected = theta.weights[1] @ h + theta.biases[1]
        assert forward(theta, 0.3, 0.05) == pytest.approx(expected[0], rel=1e-14)

    @pytest.mark.invariant
    def test_permutation_invariance(self):
        theta = random_params((2, 5, 1), 3)
        perm = np.array([3, 0, 4, 1, 2])
        swapped = PolicyParams(theta.arch,
                               [theta.weights[0][perm], theta.weights[1][:, perm]],
                               [theta.biases[0][perm], theta.biases[1]])
        t, y = np.linspace(0, 1, 11), np.linspace(0.0, 0.1, 11)
        np.testing.assert_allclose(forward(swapped, t, y), forward(theta, t, y), rtol=1e-14, atol=1e-15)

    @pytest.mark.invariant
    def test_smooth_in_inputs(self):
        theta = random_params((2, 5, 1), 4)
        t = np.linspace(0, 1, 2001)
        pi = forward(theta, t, 0.04)
        assert np.max(np.abs(np.diff(pi))) < 1e-2


class TestInit:
    def test_deterministic(self):
        np.testing.assert_array_equal(init_params((2, 3, 1), seed=5).flatten(),
                                      init_params((2, 3, 1), seed=5).flatten())
        assert not np.array_equal(init_params((2, 3, 1), seed=5).flatten(),
                                  init_params((2, 3, 1), seed=6).flatten())

    def test_zero_scale(self):
        np.testing.assert_array_equal(init_params((2, 5, 1), sigma_init=0.0, seed=1).flatten(), 0.0)

    def test_small_output_over_seeds(self):
        t, y = np.meshgrid(np.linspace(0, 1, 11), np.linspace(0.0, 0.1, 11))
        small = 0
        for seed in range(1000):
            theta = init_params((2, 3, 1), 0.1, seed, y_scale=0.176**2)
            small += np.max(np.abs(forward(theta, t, y))) < 0.5
        assert small / 1000 >= 0.99

    def test_rejects_negative_scale(self):
        with pytest.raises(ValueError):
            init_params((2, 3, 1), sigma_init=-0.1)


class TestFlatten:
    @pytest.mark.invariant
    @settings(max_examples=50, deadline=None)
    @given(hidden=st.lists(st.integers(1, 6), min_size=0, max_size=3), seed=st.integers(0, 2**32 - 1))
    def test_round_trip(self, hidden, seed):
        arch = (2, *hidden, 1)
        flat = np.random.default_rng(seed).standard_normal(param_count(arch))
        theta = PolicyParams.from_flat(arch, flat)
        np.testing.assert_array_equal(theta.flatten(), flat)
        again = PolicyParams.from_flat(arch, theta.flatten())
        for a, b in zip(again.weights + again.biases, theta.weights + theta.biases):
            np.testing.assert_array_equal(a, b)

    def test_order_weights_then_biases(self):
        theta = PolicyParams.from_flat((2, 1), [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(theta.weights[0], [[1.0, 2.0]])
        np.testing.assert_array_equal(theta.biases[0], [3.0])


class TestBackward:
    @pytest.mark.parametrize("arch", [(2, 1), (2, 3, 1), (2, 4, 3, 1)])
    def test_matches_differences(self, arch):
        theta = random_params(arch, 7, y_scale=0.04)
        rng = np.random.default_rng(8)
        t, y, w = rng.uniform(0, 1, 20), rng.uniform(0, 0.1, 20), rng.standard_normal(20)
        cache = []
        forward(theta, t, y, cache=cache)
        g = backward(theta, cache, w)
        flat = theta.flatten()
        h = 1e-6
        fd = np.empty_like(flat)
        for i in range(flat.size):
            xp, xm = flat.copy(), flat.copy()
            xp[i] += h
            xm[i] -= h
            fp = np.dot(w, forward(PolicyParams.from_flat(arch, xp, 0.04), t, y))
            fm = np.dot(w, forward(PolicyParams.from_flat(arch, xm, 0.04), t, y))
            fd[i] = (fp - fm) / (2 * h)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)
