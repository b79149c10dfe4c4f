"""Ordered-simplex geometry and quadrature rules."""

import math

import numpy as np
import pytest

from volback.simplex import (
    QuadratureConfigError,
    QuadratureRule,
    SimplexDomainError,
    SimplexPoint,
    from_gap_coords,
    integrate_simplex,
    simplex_contains,
    simplex_nodes,
    simplex_volume,
    to_gap_coords,
)


def vectorized(fn):
    fn.vectorized = True
    return fn


@vectorized
def ones(x, xi):
    return np.ones(len(xi))


class TestMembership:
    def test_ordered_point_inside(self):
        assert simplex_contains(1.0, (0.5, 0.25, 0.2))

    def test_boundary_points_included(self):
        assert simplex_contains(1.0, (1.0, 0.5, 0.0))
        assert simplex_contains(0.5, (0.5, 0.5, 0.5))

    def test_unordered_point_outside(self):
        assert not simplex_contains(1.0, (0.25, 0.5, 0.2))

    def test_negative_coordinate_outside(self):
        assert not simplex_contains(1.0, (0.5, -0.01))

    def test_x_above_one_not_a_member(self):
        assert not simplex_contains(1.5, (0.5,))

    def test_point_validates_on_construction(self):
        with pytest.raises(SimplexDomainError):
            SimplexPoint(1.0, (0.2, 0.5))


class TestVolume:
    @pytest.mark.parametrize("n", range(1, 7))
    def test_volume_formula(self, n):
        assert simplex_volume(n, 1.0) == pytest.approx(1.0 / math.factorial(n))

    def test_volume_scales_with_x(self):
        assert simplex_volume(2, 0.5) == pytest.approx(0.125)

    def test_volume_zero_at_origin(self):
        assert simplex_volume(3, 0.0) == 0.0

    def test_bad_order_rejected(self):
        with pytest.raises(SimplexDomainError):
            simplex_volume(0, 1.0)


class TestGapCoordinates:
    def test_round_trip(self):
        pt = SimplexPoint(0.9, (0.5, 0.25, 0.2))
        gaps, tail = to_gap_coords(pt)
        assert gaps == pytest.approx((0.4, 0.25, 0.05))
        assert tail == pytest.approx(0.2)
        back = from_gap_coords(0.9, gaps)
        assert back.xi == pytest.approx(pt.xi)

    def test_negative_gap_rejected(self):
        with pytest.raises(SimplexDomainError):
            from_gap_coords(0.5, (0.2, -0.1))

    def test_overshoot_rejected(self):
        with pytest.raises(SimplexDomainError):
            from_gap_coords(0.5, (0.3, 0.3))


class TestRuleValidation:
    def test_nonpositive_resolution_rejected(self):
        with pytest.raises(QuadratureConfigError):
            QuadratureRule("tensor-gauss-legendre-on-gaps", 0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(QuadratureConfigError):
            QuadratureRule("midpoint", 4)

    def test_deterministic_needs_two_nodes(self):
        with pytest.raises(QuadratureConfigError):
            QuadratureRule.trapezoid(1)


class TestQuadrature:
    @pytest.mark.parametrize("n", range(1, 7))
    def test_gauss_volume(self, n):
        rule = QuadratureRule.gauss(4)
        val = integrate_simplex(n, 1.0, ones, rule)
        assert val == pytest.approx(1.0 / math.factorial(n), rel=1e-12)

    def test_trapezoid_converges_on_quartic(self):
        # integral of xi1**2 xi2 over T_2(1) is 1/10
        @vectorized
        def quartic(x, xi):
            return xi[:, 0] ** 2 * xi[:, 1]

        coarse = integrate_simplex(2, 1.0, quartic, QuadratureRule.trapezoid(4))
        fine = integrate_simplex(2, 1.0, quartic, QuadratureRule.trapezoid(64))
        assert abs(fine - 0.1) < abs(coarse - 0.1)
        assert fine == pytest.approx(0.1, rel=1e-3)

    def test_monte_carlo_close_and_seeded(self):
        rule = QuadratureRule.monte_carlo(20000, seed=7)
        val = integrate_simplex(3, 1.0, ones, rule)
        assert val == pytest.approx(1.0 / 6.0, rel=2e-2)
        again = integrate_simplex(3, 1.0, ones, rule)
        assert again == val

    def test_polynomial_moment(self):
        # integral of xi2 over T_2(1) is 1/6
        @vectorized
        def second(x, xi):
            return xi[:, 1]

        val = integrate_simplex(2, 1.0, second, QuadratureRule.gauss(6))
        assert val == pytest.approx(1.0 / 6.0, rel=1e-12)

    def test_tail_moment_order3(self):
        # integral of xi3 over T_3(1) is 1/24
        @vectorized
        def third(x, xi):
            return xi[:, 2]

        val = integrate_simplex(3, 1.0, third, QuadratureRule.gauss(6))
        assert val == pytest.approx(1.0 / 24.0, rel=1e-12)

    def test_x_zero_returns_zero_without_eval(self):
        def boom(point):
            raise AssertionError("must not be called")

        assert integrate_simplex(3, 0.0, boom, QuadratureRule.gauss(4)) == 0.0

    def test_scalar_integrand_path(self):
        val = integrate_simplex(2, 1.0, lambda pt: 1.0, QuadratureRule.gauss(4))
        assert val == pytest.approx(0.5, rel=1e-12)

    def test_nodes_inside_simplex(self):
        pts, w = simplex_nodes(3, 0.8, QuadratureRule.gauss(5))
        assert np.all(pts[:, 0] <= 0.8 + 1e-15)
        assert np.all(np.diff(pts, axis=1) <= 1e-15)
        assert np.all(pts >= -1e-15)
        assert w.sum() == pytest.approx(0.8**3 / 6.0, rel=1e-12)
