"""Exact reference results for the Gaussian ensembles and their correlators.

The sampled field marginal has density proportional to exp(-beta * S_m), so
both matter actions admit closed-form covariances:

    free:            C = (1/beta) I
    free_collective: C = [beta (I + ones ones^T)]^{-1}
                       = (1/beta) (I - ones ones^T / (N + 1))

the latter by the rank-one-update inverse identity.  Spacetime correlator
grids, the discrete commutator kernel, and a continuum quadrature are
derived from these.  The continuum quadrature is a qualitative aid only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .action import MatterActionKind
from .lattice import MomentumLattice, omega

DENSE_MATRIX_LIMIT = 4096


class OracleUnavailableError(ValueError):
    """No closed form exists for the requested configuration."""


class QuadratureError(RuntimeError):
    """The continuum quadrature failed its internal convergence check."""


@dataclass(frozen=True)
class ExactCovariance:
    """Closed-form ensemble covariance with constant diagonal and constant
    off-diagonal, stored as two scalars so that N = 25^3 stays O(N)."""

    kind: MatterActionKind
    n_sites: int
    beta: float
    diag: float
    offdiag: float

    def matrix(self) -> np.ndarray:
        if self.n_sites > DENSE_MATRIX_LIMIT:
            raise ValueError(
                f"dense covariance limited to {DENSE_MATRIX_LIMIT} sites; use matvec"
            )
        out = np.full((self.n_sites, self.n_sites), self.offdiag)
        np.fill_diagonal(out, self.diag)
        return out

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        return (self.diag - self.offdiag) * v + self.offdiag * np.sum(v)

    def quadratic_form(self, u: np.ndarray, v: np.ndarray) -> complex:
        """conj(u)^T C v without forming the dense matrix."""
        return complex(np.conj(u) @ self.matvec(v))

    def row_sum(self) -> float:
        return self.diag + (self.n_sites - 1) * self.offdiag


def exact_covariance(kind: MatterActionKind, n_sites: int, beta: float) -> ExactCovariance:
    if n_sites < 1:
        raise ValueError("n_sites must be at least 1")
    if not beta > 0:
        raise ValueError("beta must be positive")
    if kind is MatterActionKind.FREE:
        return ExactCovariance(kind, n_sites, beta, 1.0 / beta, 0.0)
    if kind is MatterActionKind.FREE_COLLECTIVE:
        return ExactCovariance(
            kind,
            n_sites,
            beta,
            (1.0 / beta) * (1.0 - 1.0 / (n_sites + 1)),
            -1.0 / (beta * (n_sites + 1)),
        )
    raise OracleUnavailableError(f"no closed-form covariance for {kind!r}")


def _phase_angles(lattice: MomentumLattice, mass: float, points: np.ndarray) -> np.ndarray:
    """Angles omega(p) y0 - p . yvec for each grid point and site: (G, N)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != 4:
        raise ValueError("grid points must be rows (y0, y1, y2, y3)")
    momenta = lattice.site_momenta()
    freqs = omega(momenta, mass)
    return np.outer(points[:, 0], freqs) - points[:, 1:] @ momenta.T


def expected_correlator(
    kind: MatterActionKind,
    lattice: MomentumLattice,
    mass: float,
    beta: float,
    points: np.ndarray,
) -> np.ndarray:
    """Exact grid of sum_{p',p} C_{p'p} exp(i(omega_p y0 - p . yvec)).

    Only the fixed mass shell has a closed form.  Because both covariances
    have constant row sums, the double sum collapses to (row sum) times the
    single phase sum over sites.
    """
    cov = exact_covariance(kind, lattice.site_count, beta)
    phase_sum = np.exp(1j * _phase_angles(lattice, mass, points)).sum(axis=1)
    return cov.row_sum() * phase_sum


def pauli_jordan_discrete(
    lattice: MomentumLattice, mass: float, beta: float, points: np.ndarray
) -> np.ndarray:
    """Discrete commutator kernel (1/beta) sum_p sin(omega_p y0 - p . yvec).

    This is exactly the imaginary part of the free expected correlator.  On
    the centered lattice it vanishes identically at y0 = 0 by the p <-> -p
    pairing and is odd under y0 -> -y0 at yvec = 0.
    """
    angles = _phase_angles(lattice, mass, points)
    return np.sin(angles).sum(axis=1) / beta


def smeared_commutator(
    lattice: MomentumLattice,
    mass: float,
    beta: float,
    weights_a: np.ndarray,
    weights_b: np.ndarray,
    delta: np.ndarray,
) -> float:
    """Envelope-weighted commutator kernel for two packets separated by the
    spacetime displacement delta = (dt, dx, dy, dz):

        (2/beta) sum_p w_a(p) w_b(p) sin(omega_p dt - p . dvec)

    Direct site sum, independent of the operator-algebra code path.
    """
    delta = np.asarray(delta, dtype=float).reshape(4)
    momenta = lattice.site_momenta()
    freqs = omega(momenta, mass)
    angles = freqs * delta[0] - momenta @ delta[1:]
    wa = np.asarray(weights_a, dtype=float)
    wb = np.asarray(weights_b, dtype=float)
    return (2.0 / beta) * float(np.sum(wa * wb * np.sin(angles)))


def continuum_wightman(
    y: np.ndarray, mass: float, cutoff: float, n_points: int = 2000
) -> complex:
    """Radial quadrature of the continuum positive-frequency kernel

        (1/(2 pi)^3) integral d^3p / (2 omega_p) exp(-i(omega_p y0 - p . yvec))

    with the smooth momentum window exp(-(p/cutoff)^8), integrated out to
    2 * cutoff.  Qualitative aid for figure-level comparison only; never
    used in acceptance gates.
    """
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    if n_points < 8:
        raise ValueError("n_points too small")
    y = np.asarray(y, dtype=float).reshape(4)
    r = float(np.linalg.norm(y[1:]))

    def evaluate(n: int) -> complex:
        nodes, weights = np.polynomial.legendre.leggauss(n)
        p = (nodes + 1.0) * cutoff  # map [-1, 1] -> [0, 2 cutoff]
        w = weights * cutoff
        freq = np.sqrt(p * p + mass * mass)
        window = np.exp(-((p / cutoff) ** 8))
        radial = np.sinc(p * r / np.pi) if r > 0 else np.ones_like(p)
        integrand = (p * p / (2.0 * freq)) * window * radial * np.exp(-1j * freq * y[0])
        return complex(np.sum(w * integrand) / (2.0 * np.pi**2))

    value = evaluate(n_points)
    check = evaluate(max(8, n_points // 2))
    tol = 1e-8 * (1.0 + abs(value))
    if abs(value - check) > tol:
        raise QuadratureError(
            f"quadrature not converged: |delta|={abs(value - check):.3e} "
            f"at n={n_points} vs n={max(8, n_points // 2)} (tol {tol:.3e}); "
            "increase n_points"
        )
    return value
