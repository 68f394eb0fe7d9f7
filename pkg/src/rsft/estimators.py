"""Trajectory-average estimators with batch-means error bars.

All estimators are streaming accumulators fed one field snapshot at a time,
so figure-scale runs never hold the sample history in memory.  Statistical
errors come from batch means over contiguous fixed-length batches; at least
eight complete batches are required before an error bar is reported.
Accumulators over disjoint sample ranges merge associatively.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .lattice import MomentumLattice, MassShell, FixedShell, effective_masses, omega

MIN_BATCHES = 8
MAX_COVARIANCE_SITES = 64
DEFAULT_MGF_EPSILON = 0.1


class EstimatorError(RuntimeError):
    pass


def default_batch_len(sampling_steps: int, thin_stride: int) -> int:
    """Batch length in samples: sampling_steps / 64 with a floor of 100,
    converted through the thinning stride."""
    return max(100, sampling_steps // (64 * max(1, thin_stride)))


def _batch_stderr(batch_means: np.ndarray) -> tuple[float, float] | None:
    if batch_means.shape[0] < MIN_BATCHES:
        return None
    n = batch_means.shape[0]
    se_re = float(np.std(batch_means.real, ddof=1) / np.sqrt(n))
    se_im = float(np.std(batch_means.imag, ddof=1) / np.sqrt(n))
    return se_re, se_im


class RunningMoments:
    """Streaming mean of a scalar observable with batch-means errors."""

    def __init__(self, batch_len: int):
        if batch_len < 1:
            raise ValueError("batch_len must be at least 1")
        self.batch_len = batch_len
        self.count = 0
        self._total = 0.0 + 0.0j
        self._batch_total = 0.0 + 0.0j
        self._batch_count = 0
        self._batch_means: list[complex] = []

    def add(self, value) -> None:
        value = complex(value)
        self.count += 1
        self._total += value
        self._batch_total += value
        self._batch_count += 1
        if self._batch_count == self.batch_len:
            self._batch_means.append(self._batch_total / self.batch_len)
            self._batch_total = 0.0 + 0.0j
            self._batch_count = 0

    def merge(self, other: "RunningMoments") -> None:
        """Absorb an accumulator over a later, disjoint sample range."""
        if other.batch_len != self.batch_len:
            raise ValueError("cannot merge accumulators with different batch lengths")
        if self._batch_count != 0:
            raise ValueError("left accumulator must end on a batch boundary to merge")
        self.count += other.count
        self._total += other._total
        self._batch_means.extend(other._batch_means)
        self._batch_total = other._batch_total
        self._batch_count = other._batch_count

    @property
    def mean(self) -> complex:
        if self.count == 0:
            raise EstimatorError("no samples accumulated")
        return self._total / self.count

    @property
    def batch_means(self) -> np.ndarray:
        return np.asarray(self._batch_means, dtype=complex)

    @property
    def n_batches(self) -> int:
        return len(self._batch_means)

    @property
    def stderr_available(self) -> bool:
        return self.n_batches >= MIN_BATCHES

    @property
    def stderr_pair(self) -> tuple[float, float] | None:
        return _batch_stderr(self.batch_means)

    @property
    def stderr(self) -> float | None:
        """Batch-means standard error of the real part (the full pair is
        available as stderr_pair for complex observables)."""
        pair = self.stderr_pair
        return None if pair is None else pair[0]


def average(
    observable: Callable[[np.ndarray], complex],
    samples: Iterable[np.ndarray],
    batch_len: int,
) -> RunningMoments:
    """Trajectory average of observable(phi) over a stream of snapshots."""
    acc = RunningMoments(batch_len)
    for phi in samples:
        acc.add(observable(phi))
    return acc


class _VectorBatches:
    """Shared batch-means machinery for array-valued observables."""

    def __init__(self, shape: tuple[int, ...], batch_len: int, dtype=float):
        self.batch_len = batch_len
        self.count = 0
        self.total = np.zeros(shape, dtype=dtype)
        self._batch_total = np.zeros(shape, dtype=dtype)
        self._batch_count = 0
        self.batch_means: list[np.ndarray] = []

    def add(self, value: np.ndarray) -> None:
        self.count += 1
        self.total += value
        self._batch_total += value
        self._batch_count += 1
        if self._batch_count == self.batch_len:
            self.batch_means.append(self._batch_total / self.batch_len)
            self._batch_total[...] = 0
            self._batch_count = 0

    def merge(self, other: "_VectorBatches") -> None:
        if other.batch_len != self.batch_len:
            raise ValueError("cannot merge accumulators with different batch lengths")
        if self._batch_count != 0:
            raise ValueError("left accumulator must end on a batch boundary to merge")
        self.count += other.count
        self.total += other.total
        self.batch_means.extend(other.batch_means)
        self._batch_total = other._batch_total.copy()
        self._batch_count = other._batch_count

    def mean(self) -> np.ndarray:
        if self.count == 0:
            raise EstimatorError("no samples accumulated")
        return self.total / self.count

    def stderr(self) -> tuple[np.ndarray, np.ndarray] | None:
        if len(self.batch_means) < MIN_BATCHES:
            return None
        stack = np.stack(self.batch_means)
        n = stack.shape[0]
        se_re = np.std(stack.real, axis=0, ddof=1) / np.sqrt(n)
        se_im = np.std(stack.imag, axis=0, ddof=1) / np.sqrt(n)
        return se_re, se_im


@dataclass
class CovarianceResult:
    """Centered covariance estimates for a site subset, with the batch-means
    standard error of the underlying product averages."""

    sites: tuple[int, ...]
    matrix: np.ndarray
    stderr: np.ndarray | None
    n_samples: int


class CovarianceAccumulator:
    """Covariance of field values over a bounded site subset.

    Entries are trajectory averages of phi(p) phi(q) minus the product of
    the mean values; the error bar is the batch-means standard error of the
    product average, whose noise dominates for near-centered ensembles.
    """

    def __init__(self, sites: Sequence[int], batch_len: int):
        sites = tuple(int(i) for i in sites)
        if not sites:
            raise ValueError("site subset must be nonempty")
        if len(sites) > MAX_COVARIANCE_SITES:
            raise ValueError(f"site subset limited to {MAX_COVARIANCE_SITES} sites")
        self.sites = sites
        k = len(sites)
        self._index = np.asarray(sites, dtype=int)
        self._products = _VectorBatches((k, k), batch_len)
        self._values = _VectorBatches((k,), batch_len)

    def add(self, phi: np.ndarray) -> None:
        sub = phi[self._index]
        self._products.add(np.outer(sub, sub))
        self._values.add(sub)

    def merge(self, other: "CovarianceAccumulator") -> None:
        if other.sites != self.sites:
            raise ValueError("cannot merge accumulators over different site subsets")
        self._products.merge(other._products)
        self._values.merge(other._values)

    def result(self) -> CovarianceResult:
        means = self._values.mean()
        matrix = self._products.mean() - np.outer(means, means)
        se = self._products.stderr()
        return CovarianceResult(
            self.sites, matrix, None if se is None else se[0], self._products.count
        )


def mode_covariance(
    sites: Sequence[int], samples: Iterable[np.ndarray], batch_len: int
) -> CovarianceResult:
    acc = CovarianceAccumulator(sites, batch_len)
    for phi in samples:
        acc.add(phi)
    return acc.result()


class VarianceAccumulator:
    """Per-site variance of the field over all lattice sites at once."""

    def __init__(self, n_sites: int, batch_len: int):
        self._squares = _VectorBatches((n_sites,), batch_len)
        self._values = _VectorBatches((n_sites,), batch_len)

    def add(self, phi: np.ndarray) -> None:
        self._squares.add(phi * phi)
        self._values.add(phi)

    def merge(self, other: "VarianceAccumulator") -> None:
        self._squares.merge(other._squares)
        self._values.merge(other._values)

    def result(self) -> tuple[np.ndarray, np.ndarray | None, int]:
        """(variances, stderr of the square averages or None, sample count)."""
        variances = self._squares.mean() - self._values.mean() ** 2
        se = self._squares.stderr()
        return variances, None if se is None else se[0], self._squares.count


class MgfAccumulator:
    """Second derivative of the log moment generating function by central
    finite differences in the source amplitude.

    For distinct sites the four source patterns (+,+), (+,-), (-,+), (-,-)
    at amplitude eps give d^2 ln Z / dj_p dj_q up to O(eps^2); for p = q the
    two patterns +eps, -eps suffice because ln Z(0) = 0 identically.
    """

    def __init__(self, site_p: int, site_q: int, eps: float, batch_len: int):
        if not 0 < eps <= DEFAULT_MGF_EPSILON:
            raise ValueError(f"eps must be in (0, {DEFAULT_MGF_EPSILON}]")
        self.site_p = int(site_p)
        self.site_q = int(site_q)
        self.eps = float(eps)
        if self.site_p == self.site_q:
            self._signs = ((1,), (-1,))
        else:
            self._signs = ((1, 1), (1, -1), (-1, 1), (-1, -1))
        self._moments = _VectorBatches((len(self._signs),), batch_len)

    def add(self, phi: np.ndarray) -> None:
        p, q, eps = self.site_p, self.site_q, self.eps
        if p == q:
            exponents = np.array([eps * phi[p], -eps * phi[p]])
        else:
            exponents = np.array(
                [eps * (s1 * phi[p] + s2 * phi[q]) for s1, s2 in self._signs]
            )
        with np.errstate(over="ignore"):
            values = np.exp(exponents)
        if not np.all(np.isfinite(values)):
            raise EstimatorError(
                "overflow in exponential source average; reduce the probe amplitude eps"
            )
        self._moments.add(values)

    def merge(self, other: "MgfAccumulator") -> None:
        if (other.site_p, other.site_q, other.eps) != (self.site_p, self.site_q, self.eps):
            raise ValueError("cannot merge probes with different sites or amplitudes")
        self._moments.merge(other._moments)

    def _finite_difference(self, moments: np.ndarray) -> float:
        logs = np.log(moments)
        if self.site_p == self.site_q:
            return float((logs[0] + logs[1]) / self.eps**2)
        return float((logs[0] - logs[1] - logs[2] + logs[3]) / (4.0 * self.eps**2))

    def result(self) -> tuple[float, float | None, int]:
        """(estimate, batch-means stderr or None, sample count)."""
        estimate = self._finite_difference(self._moments.mean())
        if len(self._moments.batch_means) < MIN_BATCHES:
            return estimate, None, self._moments.count
        per_batch = np.array(
            [self._finite_difference(m) for m in self._moments.batch_means]
        )
        se = float(np.std(per_batch, ddof=1) / np.sqrt(per_batch.shape[0]))
        return estimate, se, self._moments.count


def mgf_covariance_check(
    site_p: int,
    site_q: int,
    eps: float,
    samples: Iterable[np.ndarray],
    batch_len: int,
) -> tuple[float, float | None]:
    acc = MgfAccumulator(site_p, site_q, eps, batch_len)
    for phi in samples:
        acc.add(phi)
    estimate, se, _ = acc.result()
    return estimate, se


@dataclass(frozen=True)
class GridSpec:
    """Spacetime evaluation grid: the outer product of a set of times and a
    set of spatial points, enumerated times-major."""

    times: np.ndarray
    spatial: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", np.atleast_1d(np.asarray(self.times, dtype=float)))
        spatial = np.asarray(self.spatial, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "spatial", spatial)

    @classmethod
    def plane(
        cls,
        t_extent: float,
        t_points: int,
        x_extent: float,
        x_points: int,
        axis: int = 1,
    ) -> "GridSpec":
        """Rectangular grid on the (y0, y_axis) plane through the origin."""
        if axis not in (1, 2, 3):
            raise ValueError("axis must be 1, 2 or 3")
        times = np.linspace(-t_extent, t_extent, t_points)
        spatial = np.zeros((x_points, 3))
        spatial[:, axis - 1] = np.linspace(-x_extent, x_extent, x_points)
        return cls(times, spatial)

    @property
    def n_points(self) -> int:
        return self.times.shape[0] * self.spatial.shape[0]

    def points(self) -> np.ndarray:
        """(G, 4) rows (y0, y1, y2, y3) in grid order."""
        t = np.repeat(self.times, self.spatial.shape[0])
        x = np.tile(self.spatial, (self.times.shape[0], 1))
        return np.column_stack([t, x])


@dataclass
class CorrelatorGrid:
    """Estimated two-point correlator on a spacetime grid."""

    points: np.ndarray
    values: np.ndarray
    stderr_re: np.ndarray | None
    stderr_im: np.ndarray | None
    source: str
    n_samples: int


class CorrelatorAccumulator:
    """Spacetime two-point correlator estimator.

    Per snapshot the estimator accumulates A(l) * B(y, l) with
    A = sum_{p'} phi(p') and B(y) = sum_p phi(p) exp(i(omega_p y0 - p . yvec)),
    the factorized form of the double sum over site pairs.  The frequency
    omega_p is re-evaluated from the mass-shell kind at every snapshot, so
    dynamically defined shells are supported; the spatial phases never change
    and are applied once per batch.
    """

    def __init__(
        self,
        grid: GridSpec,
        lattice: MomentumLattice,
        shell: MassShell,
        batch_len: int,
    ):
        if batch_len < 1:
            raise ValueError("batch_len must be at least 1")
        self.grid = grid
        self.lattice = lattice
        self.shell = shell
        self.batch_len = batch_len
        momenta = lattice.site_momenta()
        self._momenta = momenta
        # (N, S) spatial phases exp(-i p . x)
        self._spatial_phase = np.exp(-1j * momenta @ grid.spatial.T)
        self._fixed_time_phase = None
        if isinstance(shell, FixedShell):
            freqs = omega(momenta, shell.mass)
            self._fixed_time_phase = np.exp(1j * np.outer(grid.times, freqs))
        shape = (grid.times.shape[0], lattice.site_count)
        self.count = 0
        self._total = np.zeros(shape, dtype=complex)
        self._batch_total = np.zeros(shape, dtype=complex)
        self._batch_count = 0
        # completed batches are projected straight onto the (T, S) grid, so
        # memory stays O(T N + batches * T S) at figure scale
        self._batch_grids: list[np.ndarray] = []

    def add(self, phi: np.ndarray) -> None:
        field_sum = float(np.sum(phi))
        weighted = field_sum * phi
        if self._fixed_time_phase is not None:
            contribution = self._fixed_time_phase * weighted[None, :]
        else:
            freqs = omega(self._momenta, effective_masses(self.shell, phi))
            contribution = np.exp(1j * np.outer(self.grid.times, freqs)) * weighted[None, :]
        self.count += 1
        self._total += contribution
        self._batch_total += contribution
        self._batch_count += 1
        if self._batch_count == self.batch_len:
            self._batch_grids.append((self._batch_total / self.batch_len) @ self._spatial_phase)
            self._batch_total[...] = 0
            self._batch_count = 0

    def merge(self, other: "CorrelatorAccumulator") -> None:
        if other.batch_len != self.batch_len:
            raise ValueError("cannot merge accumulators with different batch lengths")
        if not (
            np.array_equal(other.grid.times, self.grid.times)
            and np.array_equal(other.grid.spatial, self.grid.spatial)
        ):
            raise ValueError("cannot merge accumulators over different grids")
        if self._batch_count != 0:
            raise ValueError("left accumulator must end on a batch boundary to merge")
        self.count += other.count
        self._total += other._total
        self._batch_grids.extend(other._batch_grids)
        self._batch_total = other._batch_total.copy()
        self._batch_count = other._batch_count

    def result(self, source: str = "mc") -> CorrelatorGrid:
        if self.count == 0:
            raise EstimatorError("no samples accumulated")
        values = ((self._total / self.count) @ self._spatial_phase).reshape(-1)
        if len(self._batch_grids) >= MIN_BATCHES:
            stack = np.stack([g.reshape(-1) for g in self._batch_grids])
            n = stack.shape[0]
            se_re = np.std(stack.real, axis=0, ddof=1) / np.sqrt(n)
            se_im = np.std(stack.imag, axis=0, ddof=1) / np.sqrt(n)
        else:
            se_re = se_im = None
        return CorrelatorGrid(
            self.grid.points(), values, se_re, se_im, source, self.count
        )


def correlator(
    grid: GridSpec,
    shell: MassShell,
    lattice: MomentumLattice,
    samples: Iterable[np.ndarray],
    batch_len: int,
) -> CorrelatorGrid:
    acc = CorrelatorAccumulator(grid, lattice, shell, batch_len)
    for phi in samples:
        acc.add(phi)
    return acc.result()
