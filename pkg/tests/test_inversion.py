"""Transform inversion: radius selection, Picard iteration, derivative."""

import math

import numpy as np
import pytest

from volback.inversion import (
    InversionConfig,
    InversionDomainError,
    NoContractionError,
    choose_radius,
    dk_matrix,
    frechet_dk,
    frechet_profile,
    invert,
    invert_with_info,
    lipschitz_check,
    neumann_norm_estimate,
)
from volback.simplex import QuadratureRule
from volback.volterra import (
    GainFunctions,
    GridFunction,
    build_gains,
    gain_ell,
    linearized_profile,
    series_profile,
)


@pytest.fixture(scope="module")
def gains(kernel_series):
    return build_gains(kernel_series, rule=QuadratureRule.gauss(12))


@pytest.fixture(scope="module")
def config(gains):
    return choose_radius(gains)


@pytest.fixture(scope="module")
def mesh():
    return np.linspace(0.0, 1.0, 201)


def smooth_profile(rng, mesh, norm):
    vals = sum(
        rng.standard_normal() * np.sin((k + 1) * math.pi * mesh) for k in range(4)
    )
    g = GridFunction(vals)
    return g.scale(norm / g.l2_norm())


class TestChooseRadius:
    def test_quadratic_only_balance_is_exact(self):
        g = GainFunctions(orders=(2,), norms_sq=(1.0 / 12.0,))
        cfg = choose_radius(g)
        assert cfg.s == pytest.approx(3.0 / 16.0, rel=1e-10)
        assert cfg.rho_L == pytest.approx(21.0 / 256.0, rel=1e-9)

    def test_full_series_frozen(self, config):
        assert config.s == pytest.approx(0.186091, abs=1e-5)
        assert config.rho_L == pytest.approx(0.081476, abs=1e-5)

    def test_balance_hits_target(self, gains, config):
        assert gain_ell(gains, config.s) == pytest.approx(0.5, abs=1e-9)

    def test_zero_series_gets_unit_radius(self):
        g = GainFunctions(orders=(2,), norms_sq=(0.0,))
        cfg = choose_radius(g)
        assert cfg.s == 1.0
        assert cfg.rho_L == 0.5

    def test_bad_target_rejected(self, gains):
        with pytest.raises(InversionDomainError):
            choose_radius(gains, target_ell=1.0)

    def test_config_validation(self):
        with pytest.raises(InversionDomainError):
            InversionConfig(s=-1.0, rho_L=0.1)
        with pytest.raises(InversionDomainError):
            InversionConfig(s=0.1, rho_L=0.1, tol=0.0)


class TestInvert:
    def test_round_trip(self, kernel_series, config, mesh, gl8):
        rng = np.random.default_rng(7)
        w = smooth_profile(rng, mesh, 0.5 * math.sqrt(config.rho_L))
        u = invert(w, kernel_series, config, gl8)
        back = u - series_profile(kernel_series, u, gl8)
        assert (back - w).l2_norm() < 1e-8

    def test_zero_is_fixed(self, kernel_series, config, gl8):
        w = GridFunction(np.zeros(101))
        res = invert_with_info(w, kernel_series, config, gl8)
        assert res.u.l2_norm() == 0.0
        assert res.converged

    def test_target_outside_ball_rejected(self, kernel_series, config, mesh):
        big = GridFunction(np.full(mesh.size, 2.0))
        with pytest.raises(InversionDomainError):
            invert(big, kernel_series, config)

    def test_contraction_ratios_bounded(self, kernel_series, gains, config, mesh, gl8):
        bound = math.sqrt(gain_ell(gains, config.s))
        rng = np.random.default_rng(3)
        for _ in range(5):
            w = smooth_profile(rng, mesh, 0.6 * math.sqrt(config.rho_L))
            res = invert_with_info(w, kernel_series, config, gl8)
            assert res.converged
            # ignore the last ratio: it is noise at the tolerance floor
            for ratio in res.contraction_ratios[:-1]:
                assert ratio <= bound + 0.05


class TestDerivative:
    def test_pointwise_matches_profile(self, kernel_series, mesh, gl8):
        rng = np.random.default_rng(11)
        u = smooth_profile(rng, mesh, 0.3)
        h = smooth_profile(rng, mesh, 0.2)
        prof = frechet_profile(kernel_series, u, h, gl8)
        # trapezoid cascade vs interpolated quadrature: both O(dx^2)
        for x in (0.25, 0.5, 1.0):
            direct = frechet_dk(kernel_series, u, h, x, gl8)
            idx = int(round(x * (mesh.size - 1)))
            assert direct == pytest.approx(prof.values[idx], abs=5e-5)

    def test_against_central_difference(self, kernel_series, mesh, gl8):
        rng = np.random.default_rng(13)
        eps = 1e-5
        for _ in range(5):
            u = smooth_profile(rng, mesh, 0.3)
            h = smooth_profile(rng, mesh, 0.25)
            lin = frechet_profile(kernel_series, u, h, gl8)
            plus = series_profile(kernel_series, u + h.scale(eps), gl8)
            minus = series_profile(kernel_series, u - h.scale(eps), gl8)
            fd = (plus - minus).scale(1.0 / (2.0 * eps))
            rel = (lin - fd).l2_norm() / max(lin.l2_norm(), 1e-30)
            assert rel < 1e-4

    def test_vanishes_at_origin(self, kernel_series, mesh, gl8):
        rng = np.random.default_rng(17)
        u = smooth_profile(rng, mesh, 0.3)
        h = smooth_profile(rng, mesh, 0.2)
        assert frechet_dk(kernel_series, u, h, 0.0, gl8) == 0.0

    def test_point_outside_interval_rejected(self, kernel_series, mesh, gl8):
        u = GridFunction(np.zeros(11))
        with pytest.raises(InversionDomainError):
            frechet_dk(kernel_series, u, u, 1.5, gl8)

    def test_matrix_columns_are_basis_responses(self, kernel_series, gl8):
        coarse = np.linspace(0.0, 1.0, 21)
        u = GridFunction(0.2 * np.sin(math.pi * coarse))
        mat = dk_matrix(kernel_series, u, gl8)
        e = np.zeros(21)
        e[10] = 1.0
        col = linearized_profile(kernel_series, u, GridFunction(e), gl8)
        assert mat[:, 10] == pytest.approx(col.values)


class TestNeumannEstimate:
    def test_bounded_by_geometric_series(self, kernel_series, gains, config, gl8):
        coarse = np.linspace(0.0, 1.0, 41)
        u = GridFunction(0.5 * math.sqrt(config.s) * np.sin(math.pi * coarse))
        est = neumann_norm_estimate(kernel_series, u, gl8)
        bound = 1.0 / (1.0 - math.sqrt(gain_ell(gains, config.s)))
        assert 1.0 <= est <= bound + 1e-6

    def test_zero_state_gives_identity(self, kernel_series, gl8):
        u = GridFunction(np.zeros(31))
        est = neumann_norm_estimate(kernel_series, u, gl8)
        assert est == pytest.approx(1.0, abs=1e-9)


class TestLipschitzSampling:
    def test_report_passes_on_certified_ball(self, kernel_series, gains, config, gl8):
        report = lipschitz_check(
            kernel_series, gains, config.s, trials=10, mesh_points=101, rule=gl8
        )
        assert report.passed
        assert report.worst_ratio <= report.threshold + 1e-6
        assert report.threshold == pytest.approx(math.sqrt(0.5), abs=1e-6)
