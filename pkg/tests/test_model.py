import numpy as np
import pytest

from maniflow.geometry import ChartGrid, build_metric, euclidean_metric
from maniflow.model import (BetaFamily, DiffusionModel, FluxModel, ModelError,
                            XiGrid, beta_at, beta_psi_at, compat_norms,
                            compat_residual, cumtrapz_edges, make_compatible_flux,
                            psd_audit, stream_vector, xi_interp)
from maniflow import catalog

TWO_PI = 2.0 * np.pi
CURVED2D = catalog.METRICS["curved2d"]["entries"]


class TestXiGrid:
    def test_rejects_small(self):
        with pytest.raises(ModelError):
            XiGrid(8)

    def test_edges_and_centers(self):
        xi = XiGrid(16)
        assert xi.edges[0] == 0.0 and xi.edges[-1] == 1.0
        assert len(xi.edges) == 17 and len(xi.centers) == 16
        assert np.allclose(xi.centers, xi.edges[:-1] + xi.dxi / 2)

    def test_cumtrapz_linear_exact(self):
        xi = XiGrid(32)
        table = 2.0 * xi.edges  # integrand 2 xi -> antiderivative xi^2
        out = cumtrapz_edges(table, xi.dxi)
        assert np.max(np.abs(out - xi.edges ** 2)) <= 1e-15

    def test_xi_interp_extrapolates_linearly(self):
        xi = XiGrid(16)
        table = 3.0 * xi.edges + 1.0
        for u in (-0.05, 0.37, 1.08):
            got = xi_interp(table, np.full((4,), u), xi)
            assert np.allclose(got, 3.0 * u + 1.0, atol=1e-14)


@pytest.fixture(scope="module")
def one_d():
    grid = ChartGrid(1, 64)
    M = euclidean_metric(grid)
    xi = XiGrid(64)
    return grid, M, xi


@pytest.fixture(scope="module")
def wavy_1d():
    grid = ChartGrid(1, 64)
    M = build_metric([["(1 + 0.5*sin(2*pi*x1))^2"]], grid)
    xi = XiGrid(64)
    return grid, M, xi


class TestDiffusionModel:
    def test_zero_sigma_gives_zero_everything(self, one_d):
        grid, M, xi = one_d
        dm = DiffusionModel.zero(grid, xi, M)
        assert np.all(dm.aprime == 0.0) and np.all(dm.A == 0.0)

    def test_identity_sigma_gives_identity_aprime(self, one_d):
        grid, M, xi = one_d
        dm = DiffusionModel.from_exprs([["1"]], grid, xi, M)
        assert np.max(np.abs(dm.aprime - 1.0)) <= 1e-15
        # A(xi) = xi * Id exactly (trapezoid of a constant)
        assert np.max(np.abs(dm.A[0, 0] - xi.edges)) <= 1e-14

    def test_one_d_transpose_cancels_metric(self, wavy_1d):
        # d=1: sigma^t = g^{11} s g_11 = s, so a' = s^2 for any metric
        grid, M, xi = wavy_1d
        dm = DiffusionModel.from_exprs([["(1 + xi)*(1 + 0.25*cos(2*pi*x1))"]], grid, xi, M)
        assert np.max(np.abs(dm.sigmaT - dm.sigma)) <= 1e-12
        assert np.max(np.abs(dm.aprime - dm.sigma ** 2)) <= 1e-12

    def test_porous_antiderivative(self, one_d):
        grid, M, xi = one_d
        dm = DiffusionModel.from_exprs([["sqrt(2*xi)"]], grid, xi, M)
        # a' = 2 xi sampled exactly; its trapezoid is xi^2 exactly at edges
        assert np.max(np.abs(dm.aprime[0, 0] - 2.0 * xi.edges)) <= 1e-14
        assert np.max(np.abs(dm.A[0, 0] - xi.edges ** 2)) <= 1e-14
        # off-lattice evaluation: linear interp error O(dxi^2)
        u = np.full(grid.shape, 0.3721)
        got = dm.A_at(u)[0, 0]
        assert np.max(np.abs(got - 0.3721 ** 2)) <= xi.dxi ** 2

    def test_A_at_zero_is_zero(self, wavy_1d):
        grid, M, xi = wavy_1d
        dm = DiffusionModel.from_exprs([["1 + xi"]], grid, xi, M)
        assert np.max(np.abs(dm.A_at(np.zeros(grid.shape)))) == 0.0

    def test_xi_derivative_of_A_matches_aprime(self, one_d):
        grid, M, xi = one_d
        dm = DiffusionModel.from_exprs([["sin(xi) + 1"]], grid, xi, M)
        # centered xi-FD of the A table at interior edges
        dA = (dm.A[..., 2:] - dm.A[..., :-2]) / (2.0 * xi.dxi)
        err = np.max(np.abs(dA - dm.aprime[..., 1:-1]))
        assert err <= 2.0 * xi.dxi ** 2  # smooth integrand, O(dxi^2)

    def test_psd_of_aprime_random_sigma(self):
        grid = ChartGrid(2, 16)
        M = build_metric(CURVED2D, grid)
        xi = XiGrid(16)
        dm = DiffusionModel.from_exprs(
            [["0.5 + 0.3*sin(2*pi*x1)*xi", "0.2*cos(2*pi*x2)"],
             ["0.1*xi", "0.4 + 0.2*cos(2*pi*x1 + xi)"]], grid, xi, M)
        report = psd_audit(dm, M, n_dirs=16, seed=3)
        assert report["min_quadratic_form"] >= -1e-10

    def test_psd_audit_identity_positive(self, one_d):
        grid, M, xi = one_d
        dm = DiffusionModel.from_exprs([["1"]], grid, xi, M)
        assert psd_audit(dm, M)["min_quadratic_form"] > 0.0

    def test_psd_audit_zero_sigma(self, one_d):
        grid, M, xi = one_d
        dm = DiffusionModel.zero(grid, xi, M)
        assert psd_audit(dm, M)["min_quadratic_form"] == 0.0

    def test_opnorm_flat_identity(self, one_d):
        grid, M, xi = one_d
        dm = DiffusionModel.from_exprs([["sqrt(2*xi)"]], grid, xi, M)
        assert dm.max_aprime_opnorm() == pytest.approx(2.0, abs=1e-14)


class TestBetaFamily:
    def test_zero_at_origin(self, wavy_1d):
        grid, M, xi = wavy_1d
        dm = DiffusionModel.from_exprs([["1 + xi"]], grid, xi, M)
        bf = BetaFamily(dm)
        zero = np.zeros(grid.shape)
        assert np.max(np.abs(beta_at(bf, zero))) == 0.0
        assert np.max(np.abs(beta_psi_at(bf, "xi", zero))) == 0.0

    def test_psi_one_bit_identical_to_plain(self, wavy_1d):
        grid, M, xi = wavy_1d
        dm = DiffusionModel.from_exprs([["1 + 0.5*xi"]], grid, xi, M)
        bf = BetaFamily(dm)
        assert np.array_equal(bf.weighted("1"), bf.plain)

    def test_sqrt_weight_closed_form(self, one_d):
        # sigma = 1, psi(z) = z: antiderivative of sqrt(z) is (2/3) z^{3/2}
        grid, M, xi = one_d
        dm = DiffusionModel.from_exprs([["1"]], grid, xi, M)
        bf = BetaFamily(dm)
        table = bf.weighted("xi")
        exact = (2.0 / 3.0) * xi.edges ** 1.5
        err = np.max(np.abs(table[0, 0] - exact))
        # sqrt singularity at 0 costs half an order: O(dxi^{3/2})
        assert err <= 0.5 * xi.dxi ** 1.5

    def test_derivative_recovers_sigmaT(self, wavy_1d):
        grid, M, xi = wavy_1d
        dm = DiffusionModel.from_exprs([["1 + xi^2"]], grid, xi, M)
        bf = BetaFamily(dm)
        db = (bf.plain[..., 2:] - bf.plain[..., :-2]) / (2.0 * xi.dxi)
        assert np.max(np.abs(db - dm.sigmaT[..., 1:-1])) <= 2.0 * xi.dxi ** 2

    def test_negative_psi_rejected(self, one_d):
        grid, M, xi = one_d
        dm = DiffusionModel.from_exprs([["1"]], grid, xi, M)
        with pytest.raises(ModelError, match="nonnegative"):
            BetaFamily(dm).weighted("xi - 0.5")


class TestFluxModel:
    def test_zero_flux(self, one_d):
        grid, M, xi = one_d
        fm = FluxModel.zero(grid, xi)
        assert np.all(fm.at(np.full(grid.shape, 0.5)) == 0.0)

    def test_fd_prime_matches_analytic(self, one_d):
        grid, M, xi = one_d
        fm_fd = FluxModel.from_exprs(["xi^2 / 2"], grid, xi)
        fm_an = FluxModel.from_exprs(["xi^2 / 2"], grid, xi, prime_exprs=["xi"])
        # centered FD of a quadratic is exact at interior edges
        assert np.max(np.abs(fm_fd.fprime[..., 1:-1] - fm_an.fprime[..., 1:-1])) <= 1e-14

    def test_max_prime_gnorm(self, one_d):
        grid, M, xi = one_d
        fm = FluxModel.from_exprs(["xi^2 / 2"], grid, xi, prime_exprs=["xi"])
        assert fm.max_prime_gnorm(M) == pytest.approx(1.0, abs=1e-14)

    def test_shape_validation(self, one_d):
        grid, M, xi = one_d
        with pytest.raises(ModelError, match="shape"):
            FluxModel(grid, xi, np.zeros((1, 3, 5)))


class TestCompatibility:
    def test_trivial_zero_pair(self, one_d):
        grid, M, xi = one_d
        fm = FluxModel.zero(grid, xi)
        dm = DiffusionModel.zero(grid, xi, M)
        r = compat_residual(fm, dm, M, 0.5)
        assert np.max(np.abs(r)) == 0.0

    def test_stream_requires_2d(self, wavy_1d):
        grid, M, xi = wavy_1d
        dm = DiffusionModel.zero(grid, xi, M)
        with pytest.raises(ModelError, match="d = 2"):
            make_compatible_flux(dm, M, stream="x1")

    def test_flat_stream_hand_curl(self):
        grid = ChartGrid(2, 64)
        M = euclidean_metric(grid)
        x1, x2 = grid.coords()
        W = stream_vector("sin(2*pi*x1)*sin(2*pi*x2)", M)
        # W = (d2 psi, -d1 psi) on the flat chart
        exact0 = TWO_PI * np.sin(TWO_PI * x1) * np.cos(TWO_PI * x2)
        exact1 = -TWO_PI * np.cos(TWO_PI * x1) * np.sin(TWO_PI * x2)
        scale = TWO_PI ** 3 / 6 * grid.h ** 2
        assert np.max(np.abs(W[0] - exact0)) <= 1.1 * scale
        assert np.max(np.abs(W[1] - exact1)) <= 1.1 * scale

    def test_manufactured_pair_truncation_only(self):
        grid = ChartGrid(2, 32)
        M = build_metric(CURVED2D, grid)
        xi = XiGrid(32)
        sc = catalog.SCENARIOS["curved_const"]["scenario"]
        dm = DiffusionModel.from_exprs(sc["sigma"], grid, xi, M)
        fm = make_compatible_flux(dm, M, stream=sc["stream"])
        for s in (0.0, 0.5, 1.0):
            norms = compat_norms(fm, dm, M, s)
            assert norms["max"] <= 10.0 * grid.h ** 2, f"xi={s}: {norms}"

    def test_manufactured_pair_refines_at_h2(self):
        worst = []
        for n in (32, 64):
            grid = ChartGrid(2, n)
            M = build_metric(CURVED2D, grid)
            xi = XiGrid(32)
            sc = catalog.SCENARIOS["curved_const"]["scenario"]
            dm = DiffusionModel.from_exprs(sc["sigma"], grid, xi, M)
            fm = make_compatible_flux(dm, M, stream=sc["stream"])
            worst.append(max(compat_norms(fm, dm, M, s)["max"] for s in (0.0, 0.5, 1.0)))
        assert 2.5 <= worst[0] / worst[1] <= 6.0

    def test_perturbed_pair_detected(self):
        grid = ChartGrid(2, 32)
        M = build_metric(CURVED2D, grid)
        xi = XiGrid(32)
        sc = catalog.SCENARIOS["curved_const"]["scenario"]
        dm = DiffusionModel.from_exprs(sc["sigma"], grid, xi, M)
        fm = make_compatible_flux(dm, M, stream=sc["stream"])
        perturbed = fm.f.copy()
        perturbed[0] += 0.1
        fmp = FluxModel(grid, xi, perturbed)
        r = compat_norms(fmp, dm, M, 0.5)["max"]
        assert r >= 10.0 * 10.0 * grid.h ** 2  # an order above the pass threshold

    def test_flat_metric_manufactured_pair(self):
        grid = ChartGrid(2, 32)
        M = euclidean_metric(grid)
        xi = XiGrid(32)
        dm = DiffusionModel.from_exprs(
            [["0.3 + 0.3*xi + 0.005*sin(2*pi*x1)", "0"],
             ["0", "0.3 + 0.3*xi + 0.005*cos(2*pi*x2)"]], grid, xi, M)
        fm = make_compatible_flux(dm, M, stream="0.005*sin(2*pi*x1)*sin(2*pi*x2)")
        for s in (0.0, 0.5, 1.0):
            assert compat_norms(fm, dm, M, s)["max"] <= 10.0 * grid.h ** 2
