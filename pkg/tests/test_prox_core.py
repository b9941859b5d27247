# tests/test_prox_core.py
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from app.core.prox_core import (
    ClosedFormProx,
    ForwardBackwardSplit,
    TargetDensity,
    check_midpoint_concavity,
    moreau_eval,
    prox_box_projection,
    prox_forward_backward,
    prox_nuclear_svt,
    prox_power,
    prox_quadratic,
    prox_quartic,
    prox_quartic_1d,
    prox_soft_threshold,
    prox_tv,
    tv_seminorm,
)
from app.models.schemas import ParameterError, ShapeMismatchError, TVSolverParams

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False)
lams = st.floats(min_value=1e-3, max_value=1e3)


class TestScalarProx(unittest.TestCase):
    def test_soft_threshold_shrinks_toward_zero(self):
        result = prox_soft_threshold(np.array([3.0, -0.5, 1.0, -4.0]), 1.0, 1.0)
        assert_array_equal(result, [2.0, 0.0, 0.0, -3.0])

    def test_quadratic_scales(self):
        assert_allclose(prox_quadratic(np.array([2.0, -6.0]), 0.5, 2.0), [2.0 / 3.0, -2.0])

    def test_quartic_solves_cubic(self):
        x = np.linspace(-50.0, 50.0, 41)
        u = prox_quartic(x, 0.3, 0.7)
        assert_allclose(4.0 * 0.7 * 0.3 * u ** 3 + u, x, rtol=1e-11, atol=1e-11)

    def test_quartic_scalar_wrapper(self):
        self.assertAlmostEqual(prox_quartic_1d(10.0, 0.5), float(prox_quartic(np.array([10.0]), 0.5)[0]))

    def test_power_dispatches_named_exponents(self):
        x = np.array([-2.0, 0.3, 5.0])
        assert_array_equal(prox_power(x, 0.4, 1.0, 1.5), prox_soft_threshold(x, 0.4, 1.5))
        assert_array_equal(prox_power(x, 0.4, 2.0, 1.5), prox_quadratic(x, 0.4, 1.5))
        assert_array_equal(prox_power(x, 0.4, 4.0, 1.5), prox_quartic(x, 0.4, 1.5))

    def test_power_solves_stationarity(self):
        x = np.array([-7.0, -0.2, 0.0, 0.9, 12.0])
        beta, gamma, lam = 3.0, 0.7, 0.25
        u = prox_power(x, lam, beta, gamma)
        assert_allclose(u + gamma * lam * beta * np.sign(u) * np.abs(u) ** (beta - 1.0), x, atol=1e-10)

    def test_power_rejects_non_concave_exponent(self):
        with self.assertRaises(ParameterError):
            prox_power(np.array([1.0]), 1.0, 0.5)

    def test_rejects_non_positive_lambda(self):
        with self.assertRaises(ParameterError):
            prox_soft_threshold(np.array([1.0]), 0.0, 1.0)
        with self.assertRaises(ParameterError):
            prox_quartic(np.array([1.0]), -1.0)

    def test_box_projection_clips(self):
        assert_array_equal(prox_box_projection(np.array([-3.0, 0.5, 9.0]), -1.0, 2.0), [-1.0, 0.5, 2.0])
        with self.assertRaises(ParameterError):
            prox_box_projection(np.array([0.0]), 1.0, -1.0)

    @settings(max_examples=50, deadline=None)
    @given(finite, finite, lams)
    def test_quartic_is_firmly_nonexpansive(self, a, b, lam):
        pa, pb = prox_quartic(np.array([a, b]), lam)
        self.assertLessEqual((pa - pb) ** 2, (a - b) * (pa - pb) + 1e-9 * max(1.0, (a - b) ** 2))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(finite, min_size=1, max_size=8), lams)
    def test_quartic_is_separable(self, values, lam):
        x = np.array(values)
        componentwise = np.array([prox_quartic_1d(v, lam) for v in values])
        assert_allclose(prox_quartic(x, lam), componentwise, rtol=0.0, atol=1e-14 * max(1.0, np.abs(x).max()))


class TestMatrixProx(unittest.TestCase):
    def test_svt_shrinks_singular_values(self):
        x = np.diag([5.0, 2.0, 0.5])
        assert_allclose(prox_nuclear_svt(x, 1.0), np.diag([4.0, 1.0, 0.0]), atol=1e-12)

    def test_svt_zero_threshold_is_identity(self):
        x = np.random.default_rng(0).standard_normal((5, 4))
        assert_allclose(prox_nuclear_svt(x, 0.0), x, atol=1e-12)


class TestTotalVariationProx(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)
        self.image = self.rng.standard_normal((12, 10))

    def test_zero_weight_returns_input(self):
        result = prox_tv(self.image, 1.0, 0.0)
        assert_array_equal(result.point, self.image)
        self.assertTrue(result.converged)

    def test_constant_image_is_fixed(self):
        constant = np.full((6, 6), 3.0)
        assert_allclose(prox_tv(constant, 1.0, 2.0).point, constant)

    def test_reduces_variation_and_keeps_mean(self):
        result = prox_tv(self.image, 0.5, 1.0, TVSolverParams(max_iter=500, tolerance=1e-8))
        self.assertLess(tv_seminorm(result.point), tv_seminorm(self.image))
        self.assertAlmostEqual(result.point.mean(), self.image.mean(), places=12)

    def test_iteration_cap_reports_non_convergence(self):
        result = prox_tv(self.image, 5.0, 1.0, TVSolverParams(max_iter=2, tolerance=1e-12))
        self.assertFalse(result.converged)
        self.assertEqual(result.iterations, 2)
        self.assertEqual(result.state.shape, (2, 12, 10))

    def test_hot_start_needs_fewer_iterations(self):
        params = TVSolverParams(max_iter=2000, tolerance=1e-6)
        cold = prox_tv(self.image, 1.0, 1.0, params)
        warm = prox_tv(self.image, 1.0, 1.0, params, cold.state)
        self.assertLessEqual(warm.iterations, cold.iterations)

    def test_rejects_tiny_images(self):
        with self.assertRaises(ShapeMismatchError):
            prox_tv(np.ones((1, 5)), 1.0, 1.0)


def _gaussian_target(gamma: float = 0.5) -> TargetDensity:
    return TargetDensity(
        (1,),
        lambda x: -gamma * float(np.sum(x * x)),
        ClosedFormProx("quadratic", lambda x, lam: prox_quadratic(x, lam, gamma)),
        lambda x: -2.0 * gamma * x,
        name="gaussian"
    )


class TestMoreauApproximation(unittest.TestCase):
    def test_quadratic_envelope_closed_form(self):
        gamma, lam, x = 0.5, 0.8, np.array([1.7])
        result = moreau_eval(_gaussian_target(gamma), x, lam)
        self.assertAlmostEqual(result.log_density_unnorm, -gamma * 1.7 ** 2 / (1.0 + 2.0 * gamma * lam), places=12)
        assert_allclose(result.log_gradient, (result.prox_point - x) / lam)

    def test_forward_backward_without_smooth_part_is_plain_prox(self):
        split = ForwardBackwardSplit(
            lambda x: 0.0,
            lambda x: np.zeros_like(x),
            lambda x: -float(np.sum(np.abs(x))),
            ClosedFormProx("soft_threshold", lambda x, lam: prox_soft_threshold(x, lam, 1.0))
        )
        x = np.array([2.0, -0.3])
        assert_allclose(prox_forward_backward(x, 0.5, split).point, prox_soft_threshold(x, 0.5, 1.0))

    def test_forward_backward_takes_half_gradient_step(self):
        split = ForwardBackwardSplit(
            lambda x: -float(np.sum(x * x)),
            lambda x: -2.0 * x,
            lambda x: 0.0,
            ClosedFormProx("identity", lambda x, lam: x)
        )
        # x + 2 lam c grad = x - 2 * 0.25 * 0.5 * 2 x = x / 2
        assert_allclose(prox_forward_backward(np.array([4.0]), 0.25, split).point, [2.0])

    def test_concavity_spot_check_flags_convex_density(self):
        convex = TargetDensity((2,), lambda x: float(np.sum(x * x)),
                               ClosedFormProx("none", lambda x, lam: x))
        rng = np.random.default_rng(3)
        self.assertGreater(check_midpoint_concavity(convex, rng, n_pairs=20), 0)
        self.assertEqual(check_midpoint_concavity(_gaussian_target(), rng, n_pairs=20), 0)

    def test_default_initial_prefers_map(self):
        target = TargetDensity((2,), lambda x: 0.0, ClosedFormProx("none", lambda x, lam: x),
                               map_point=np.array([1.0, 2.0]))
        assert_array_equal(target.default_initial(), [1.0, 2.0])
        self.assertIn("closed_form", repr(target))


if __name__ == '__main__':
    unittest.main()
