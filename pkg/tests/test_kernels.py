"""Tests for the RBF kernel and the median bandwidth policy."""

import numpy as np
import pytest

from particleflow import (
    KernelSpec,
    ParticleEnsemble,
    kernel_eval,
    kernel_grad_first,
    kernel_matrix,
    median_bandwidth,
    resolve_bandwidth,
)


class TestKernelEval:
    def test_hand_value(self):
        """kappa(x, y) = exp(-|x - y|^2 / h) at a worked point."""
        spec = KernelSpec(bandwidth=2.0)
        got = kernel_eval(spec, np.array([1.0, 0.0]), np.array([0.0, 2.0]))
        np.testing.assert_allclose(got, np.exp(-5.0 / 2.0), rtol=1e-15)

    def test_unit_at_zero_separation(self):
        spec = KernelSpec(bandwidth=0.7)
        x = np.array([3.0, -1.0])
        assert kernel_eval(spec, x, x) == 1.0

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        spec = KernelSpec(bandwidth=1.3)
        for _ in range(20):
            x, y = rng.normal(size=(2, 4))
            np.testing.assert_allclose(kernel_eval(spec, x, y), kernel_eval(spec, y, x), rtol=1e-15)

    def test_median_policy_needs_ensemble(self):
        spec = KernelSpec(bandwidth="median")
        with pytest.raises(ValueError):
            kernel_eval(spec, np.zeros(2), np.ones(2))


class TestKernelGrad:
    def test_closed_form(self):
        """grad_x kappa = -(2/h) (x - y) kappa."""
        spec = KernelSpec(bandwidth=1.5)
        x = np.array([1.0, 2.0])
        y = np.array([0.5, -1.0])
        k = kernel_eval(spec, x, y)
        np.testing.assert_allclose(kernel_grad_first(spec, x, y),
                                   -(2.0 / 1.5) * (x - y) * k, rtol=1e-14)

    def test_against_finite_differences(self):
        rng = np.random.default_rng(1)
        spec = KernelSpec(bandwidth=0.9)
        for _ in range(10):
            x, y = rng.normal(size=(2, 3))
            grad = kernel_grad_first(spec, x, y)
            eps = 1e-6
            for j in range(3):
                dx = np.zeros(3)
                dx[j] = eps
                num = (kernel_eval(spec, x + dx, y) - kernel_eval(spec, x - dx, y)) / (2 * eps)
                np.testing.assert_allclose(grad[j], num, rtol=1e-6, atol=1e-9)

    def test_antisymmetric_in_arguments(self):
        """Swapping the points flips the gradient's sign."""
        spec = KernelSpec(bandwidth=2.0)
        x = np.array([1.0, 1.0])
        y = np.array([-1.0, 2.0])
        np.testing.assert_allclose(kernel_grad_first(spec, x, y),
                                   -kernel_grad_first(spec, y, x), rtol=1e-15)


class TestMedianBandwidth:
    def test_three_point_hand_value(self):
        """Points {0, 1, 3} have pair distances {1, 2, 3}; med^2 / log 3 = 4 / log 3."""
        ens = ParticleEnsemble(np.array([[0.0], [1.0], [3.0]]))
        np.testing.assert_allclose(median_bandwidth(ens), 4.0 / np.log(3.0), rtol=1e-12)

    def test_floor_applies_to_degenerate_cloud(self):
        """Identical particles would give bandwidth 0; the floor prevents it."""
        ens = ParticleEnsemble(np.zeros((4, 2)))
        got = median_bandwidth(ens, floor=1e-2)
        np.testing.assert_allclose(got, 1e-2 / np.log(4.0))
        assert got > 0

    def test_single_particle_rejected(self):
        ens = ParticleEnsemble(np.zeros((1, 2)))
        with pytest.raises(ValueError):
            median_bandwidth(ens)

    def test_scale_invariance_relation(self):
        """Scaling the cloud by c scales the bandwidth by c^2."""
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(12, 2))
        h1 = median_bandwidth(ParticleEnsemble(pts))
        h3 = median_bandwidth(ParticleEnsemble(3.0 * pts))
        np.testing.assert_allclose(h3, 9.0 * h1, rtol=1e-12)

    def test_resolve_bandwidth_dispatch(self):
        ens = ParticleEnsemble(np.array([[0.0], [1.0], [3.0]]))
        fixed = KernelSpec(bandwidth=0.5)
        assert resolve_bandwidth(fixed, ens) == 0.5
        med = KernelSpec(bandwidth="median")
        np.testing.assert_allclose(resolve_bandwidth(med, ens), 4.0 / np.log(3.0))
        with pytest.raises(ValueError):
            resolve_bandwidth(med, None)


class TestKernelMatrix:
    def test_matches_pointwise(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(6, 2))
        b = rng.normal(size=(4, 2))
        got = kernel_matrix(a, b, h=1.2)
        spec = KernelSpec(bandwidth=1.2)
        for i in range(6):
            for j in range(4):
                np.testing.assert_allclose(got[i, j], kernel_eval(spec, a[i], b[j]), rtol=1e-13)

    def test_self_gram_has_unit_diagonal(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(8, 3))
        g = kernel_matrix(a, h=2.0)
        np.testing.assert_allclose(np.diag(g), np.ones(8), rtol=1e-14)
        np.testing.assert_allclose(g, g.T, rtol=1e-14)


class TestKernelSpecValidation:
    def test_bad_bandwidths_rejected(self):
        with pytest.raises(ValueError):
            KernelSpec(bandwidth=0.0)
        with pytest.raises(ValueError):
            KernelSpec(bandwidth=-1.0)
        with pytest.raises(ValueError):
            KernelSpec(bandwidth="med")

    def test_only_rbf_family(self):
        with pytest.raises(ValueError):
            KernelSpec(family="laplace", bandwidth=1.0)

    def test_with_bandwidth(self):
        spec = KernelSpec(bandwidth="median").with_bandwidth(2.5)
        assert spec.bandwidth == 2.5
