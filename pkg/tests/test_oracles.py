import numpy as np
import pytest

from rsft.action import MatterActionKind
from rsft.lattice import MomentumLattice, omega
from rsft.oracles import (
    QuadratureError,
    continuum_wightman,
    exact_covariance,
    expected_correlator,
    pauli_jordan_discrete,
    smeared_commutator,
)

FREE = MatterActionKind.FREE
COLLECTIVE = MatterActionKind.FREE_COLLECTIVE


def gauss_legendre_moments_2d(beta, half_width=8.0, nodes=400):
    """Second moments of the two-site collective density
    exp(-beta/2 (x^2 + y^2) - beta/2 (x + y)^2) by product quadrature."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    x = x * half_width
    w = w * half_width
    xx, yy = np.meshgrid(x, x, indexing="ij")
    ww = np.outer(w, w)
    density = np.exp(-0.5 * beta * (xx**2 + yy**2) - 0.5 * beta * (xx + yy) ** 2)
    norm = np.sum(ww * density)
    second = np.sum(ww * density * xx * xx) / norm
    cross = np.sum(ww * density * xx * yy) / norm
    return second, cross


class TestExactCovariance:
    def test_free_is_diagonal(self):
        cov = exact_covariance(FREE, 10, 1.0)
        assert cov.diag == 1.0
        assert cov.offdiag == 0.0

    def test_free_beta_scaling(self):
        cov = exact_covariance(FREE, 10, 2.5)
        assert cov.diag == pytest.approx(0.4)

    def test_collective_two_sites_closed_form(self):
        cov = exact_covariance(COLLECTIVE, 2, 1.0)
        np.testing.assert_allclose(cov.matrix(), [[2 / 3, -1 / 3], [-1 / 3, 2 / 3]])

    def test_collective_two_sites_against_quadrature(self):
        second, cross = gauss_legendre_moments_2d(beta=1.0)
        cov = exact_covariance(COLLECTIVE, 2, 1.0)
        assert second == pytest.approx(cov.diag, abs=1e-6)
        assert cross == pytest.approx(cov.offdiag, abs=1e-6)

    @pytest.mark.parametrize("n", [2, 5, 33, 1000])
    def test_collective_inverts_precision_matrix(self, n):
        # C must invert beta (I + ones ones^T); dense check at small n,
        # matvec identity at large n.
        beta = 1.3
        cov = exact_covariance(COLLECTIVE, n, beta)
        if n <= 64:
            precision = beta * (np.eye(n) + np.ones((n, n)))
            np.testing.assert_allclose(cov.matrix() @ precision, np.eye(n), atol=1e-12)
        rng = np.random.default_rng(n)
        v = rng.normal(size=n)
        image = beta * (cov.matvec(v) + np.sum(cov.matvec(v)))
        np.testing.assert_allclose(image, v, atol=1e-10)

    def test_row_sum_identity(self):
        cov = exact_covariance(COLLECTIVE, 2, 1.0)
        assert cov.row_sum() == pytest.approx(1 / 3)
        cov_n = exact_covariance(COLLECTIVE, 99, 2.0)
        assert cov_n.row_sum() == pytest.approx(1.0 / (2.0 * 100))

    def test_matvec_matches_dense(self):
        cov = exact_covariance(COLLECTIVE, 17, 0.7)
        v = np.random.default_rng(3).normal(size=17)
        np.testing.assert_allclose(cov.matvec(v), cov.matrix() @ v, atol=1e-13)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            exact_covariance(FREE, 0, 1.0)
        with pytest.raises(ValueError):
            exact_covariance(FREE, 3, 0.0)


def brute_force_correlator(cov_matrix, lattice, mass, points):
    """Literal double sum over site pairs: sum_{p',p} C_{p'p} e^{i theta_p}."""
    momenta = lattice.site_momenta()
    freqs = omega(momenta, mass)
    out = np.empty(len(points), dtype=complex)
    for g, y in enumerate(points):
        phases = np.exp(1j * (freqs * y[0] - momenta @ np.asarray(y[1:])))
        out[g] = np.sum(cov_matrix @ phases)
    return out


class TestExpectedCorrelator:
    def grid(self):
        return np.array(
            [
                [0.0, 0.0, 0.0, 0.0],
                [0.7, 0.0, 0.0, 0.0],
                [-0.7, 0.0, 0.0, 0.0],
                [0.4, 0.3, -0.2, 0.1],
                [1.5, -1.0, 0.0, 0.5],
            ]
        )

    def test_free_at_origin_counts_sites(self):
        lattice = MomentumLattice(5, 0.1)
        value = expected_correlator(FREE, lattice, 1.0, 2.0, np.zeros((1, 4)))[0]
        assert value == pytest.approx(lattice.site_count / 2.0)

    def test_time_reflection_conjugates(self):
        lattice = MomentumLattice(5, 0.1)
        grid = self.grid()
        values = expected_correlator(FREE, lattice, 1.0, 1.0, grid)
        assert values[2] == pytest.approx(np.conj(values[1]), rel=1e-12)

    @pytest.mark.parametrize("kind", [FREE, COLLECTIVE])
    def test_matches_brute_force_double_sum(self, kind):
        lattice = MomentumLattice(5, 0.13)
        beta, mass = 1.7, 0.8
        cov = exact_covariance(kind, lattice.site_count, beta)
        fast = expected_correlator(kind, lattice, mass, beta, self.grid())
        brute = brute_force_correlator(cov.matrix(), lattice, mass, self.grid())
        np.testing.assert_allclose(fast, brute, atol=1e-10)

    def test_collective_is_free_scaled_down(self):
        lattice = MomentumLattice(3, 0.2)
        grid = self.grid()
        free_vals = expected_correlator(FREE, lattice, 1.0, 1.0, grid)
        coll_vals = expected_correlator(COLLECTIVE, lattice, 1.0, 1.0, grid)
        np.testing.assert_allclose(coll_vals, free_vals / (lattice.site_count + 1), rtol=1e-12)


class TestPauliJordan:
    def test_zero_at_origin(self):
        lattice = MomentumLattice(5, 0.1)
        assert pauli_jordan_discrete(lattice, 1.0, 1.0, np.zeros((1, 4)))[0] == 0.0

    def test_odd_in_time_on_axis(self):
        lattice = MomentumLattice(5, 0.1)
        grid = np.array([[0.9, 0.0, 0.0, 0.0], [-0.9, 0.0, 0.0, 0.0]])
        values = pauli_jordan_discrete(lattice, 1.0, 1.0, grid)
        assert values[0] == pytest.approx(-values[1], rel=1e-12)

    def test_exactly_zero_at_equal_time_separation(self):
        # p <-> -p cancellation on the centered lattice.
        lattice = MomentumLattice(5, 0.1)
        grid = np.array([[0.0, 1.5, 0.0, 0.0], [0.0, 0.3, -0.8, 0.2]])
        values = pauli_jordan_discrete(lattice, 1.0, 1.0, grid)
        np.testing.assert_allclose(values, 0.0, atol=1e-12)

    def test_is_imaginary_part_of_free_correlator(self):
        lattice = MomentumLattice(4, 0.17)
        grid = np.array([[0.4, 0.3, -0.2, 0.1], [1.1, 0.0, 0.5, 0.0]])
        free_vals = expected_correlator(FREE, lattice, 1.2, 0.9, grid)
        pj = pauli_jordan_discrete(lattice, 1.2, 0.9, grid)
        np.testing.assert_allclose(pj, free_vals.imag, atol=1e-12)

    def test_smeared_commutator_reduces_to_plain_sum(self):
        lattice = MomentumLattice(4, 0.17)
        ones = np.ones(lattice.site_count)
        delta = np.array([0.8, 0.1, 0.0, -0.3])
        plain = pauli_jordan_discrete(lattice, 1.0, 1.0, delta.reshape(1, 4))[0]
        assert smeared_commutator(lattice, 1.0, 1.0, ones, ones, delta) == pytest.approx(
            2.0 * plain, rel=1e-12
        )


class TestContinuumWightman:
    def test_origin_value_real_positive_and_growing_in_cutoff(self):
        small = continuum_wightman(np.zeros(4), 1.0, cutoff=1.0)
        large = continuum_wightman(np.zeros(4), 1.0, cutoff=2.0)
        assert abs(small.imag) < 1e-12
        assert small.real > 0
        assert large.real > small.real

    def test_continuity_in_small_time(self):
        base = continuum_wightman(np.zeros(4), 1.0, cutoff=1.2)
        nearby = continuum_wightman(np.array([1e-4, 0, 0, 0]), 1.0, cutoff=1.2)
        assert abs(nearby - base) < 1e-3 * abs(base)

    def test_non_convergent_quadrature_raises(self):
        with pytest.raises(QuadratureError):
            continuum_wightman(np.array([40.0, 0, 0, 0]), 1.0, cutoff=5.0, n_points=16)

    def test_same_sign_pattern_as_discrete_along_time_axis(self):
        # Figure-level comparison: the real parts of the discrete sum and the
        # continuum kernel oscillate in step along the time axis.
        lattice = MomentumLattice(9, 0.1)
        cutoff = (lattice.n_per_axis - 1) / 2 * lattice.spacing
        times = np.linspace(0.0, 3.0, 7)
        grid = np.zeros((times.shape[0], 4))
        grid[:, 0] = times
        discrete = expected_correlator(FREE, lattice, 1.0, 1.0, grid).real
        continuum = np.array(
            [continuum_wightman(point, 1.0, cutoff=cutoff).real for point in grid]
        )
        # conjugate phase conventions: exp(+i w t) vs exp(-i w t) share Re.
        # The flat-measure sum and the on-shell kernel cross zero at slightly
        # different times, so compare signs away from the crossings only.
        away = np.abs(continuum) > 0.05 * np.abs(continuum).max()
        assert away.sum() >= 5
        assert np.all(np.sign(discrete[away]) == np.sign(continuum[away]))
