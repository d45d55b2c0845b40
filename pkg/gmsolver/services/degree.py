"""
GM Solver - Degree Service
Finite-dimensional degree estimates for the fixed-point homotopies
(u, v) - A^-1 F_t(u, v) on coarse grids, and the exact no-solution witness
for the decoupled problem A u = u+ + 1.

Estimates are multistart Newton counts of sign(det J) over the zeros
found. They corroborate, they do not prove.
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from gmsolver.errors import AdmissibilityError, ConfigError, DegreeError
from gmsolver.services.grid import Field, NeumannOperator, weighted_mass_identity
from gmsolver.services.linear import dense_resolvent
from gmsolver.services.model import ProblemParams, TruncationEnv, rhs_F, rhs_Fhat
from gmsolver.services.nodal_solver import default_workers

logger = logging.getLogger(__name__)

# =============================================================================
# CONSTANTS
# =============================================================================

MAX_NODES_PER_COMPONENT = 8
MAX_DIMENSION = 2 * MAX_NODES_PER_COMPONENT
FD_STEP = 1e-6
DEGREE_TOL = 1e-10
DEFAULT_STARTS = 64
NEWTON_MAX_ITER = 60
MAX_BACKTRACKS = 20
# |det J| at or below this marks a zero as irregular
DET_THRESHOLD = 1e-8
# Corners are enumerated exhaustively up to this dimension, sampled above it
CORNER_ENUM_DIM = 10
CORNER_SAMPLES = 256
BOUNDARY_SAMPLES = 256
MASS_IDENTITY_TOL = 1e-12
MAP_KINDS = ('H', 'N')


# =============================================================================
# MAPS
# =============================================================================

class DiscreteMap(Protocol):
    dimension: int

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        ...


@dataclass
class CallableMap:
    """Wraps a plain function R^d -> R^d"""

    dimension: int
    fn: Callable[[np.ndarray], np.ndarray]
    name: str = 'callable'

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)


@dataclass
class CompactMap:
    """
    (u, v) -> (u, v) - A^-1 F_t(u, v).

    kind 'H' uses the homotopy from u+ + 1, kind 'N' the one from
    (2/3) lambda1 chi_hat, both ending at the truncated regularized system.
    """

    kind: str
    op: NeumannOperator
    params: ProblemParams
    env: TruncationEnv
    t: float
    lambda1: float = 1.0

    def __post_init__(self):
        if self.kind not in MAP_KINDS:
            raise ConfigError(f"Unknown map kind: {self.kind} (expected one of {MAP_KINDS})")
        if self.op.size > MAX_NODES_PER_COMPONENT:
            raise DegreeError(
                f"Degree maps limited to {MAX_NODES_PER_COMPONENT} nodes per component, got {self.op.size}"
            )
        if not 0.0 <= self.t <= 1.0:
            raise ConfigError(f"Homotopy parameter must lie in [0, 1]: {self.t}")

    @property
    def dimension(self) -> int:
        return 2 * self.op.size

    @cached_property
    def resolvent(self) -> np.ndarray:
        return dense_resolvent(self.op)

    def at(self, t: float) -> 'CompactMap':
        return CompactMap(self.kind, self.op, self.params, self.env, t, self.lambda1)

    def rhs(self, u: Field, v: Field) -> Tuple[Field, Field]:
        if self.kind == 'H':
            return rhs_F(self.params, self.env, self.t, u, v)
        return rhs_Fhat(self.params, self.env, self.lambda1, self.t, u, v)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        n = self.op.size
        grid = self.op.grid
        u, v = Field(grid, x[:n]), Field(grid, x[n:])
        F1, F2 = self.rhs(u, v)
        r = self.resolvent
        return np.concatenate([x[:n] - r @ F1.values, x[n:] - r @ F2.values])


def map_eval(fmap: CompactMap, u: Field, v: Field) -> Tuple[Field, Field]:
    """Fixed-point residual of the homotopy map at (u, v)"""
    out = fmap.evaluate(np.concatenate([u.values, v.values]))
    n = u.values.size
    return u.with_values(out[:n]), v.with_values(out[n:])


# =============================================================================
# REGIONS
# =============================================================================

@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float).ravel()
        upper = np.array(self.upper, dtype=float).ravel()
        if lower.shape != upper.shape or np.any(upper <= lower):
            raise ConfigError("Box needs matching bounds with upper > lower in every coordinate")
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)

    @classmethod
    def symmetric(cls, half_widths) -> 'Box':
        half = np.asarray(half_widths, dtype=float)
        return cls(-half, half)

    @property
    def dimension(self) -> int:
        return self.lower.size

    def contains(self, x: np.ndarray) -> bool:
        """Open box"""
        return bool(np.all(x > self.lower) and np.all(x < self.upper))

    def closure_contains(self, x: np.ndarray) -> bool:
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def sample_interior(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(count, self.dimension))

    def boundary_points(self, rng: np.random.Generator, samples: int = BOUNDARY_SAMPLES) -> np.ndarray:
        """Corners, face centres and random points on every face"""
        d = self.dimension
        points = []

        if d <= CORNER_ENUM_DIM:
            for bits in itertools.product((0, 1), repeat=d):
                points.append(np.where(np.array(bits) == 1, self.upper, self.lower))
        else:
            for bits in rng.integers(0, 2, size=(CORNER_SAMPLES, d)):
                points.append(np.where(bits == 1, self.upper, self.lower))
            points.append(self.lower.copy())
            points.append(self.upper.copy())

        centre = 0.5 * (self.lower + self.upper)
        per_face = max(1, samples // (2 * d))
        for k in range(d):
            for bound in (self.lower[k], self.upper[k]):
                face_centre = centre.copy()
                face_centre[k] = bound
                points.append(face_centre)
                for p in self.sample_interior(rng, per_face):
                    p[k] = bound
                    points.append(p)
        return np.array(points)


@dataclass(frozen=True)
class BoxDifference:
    """Open outer box minus the closed inner box"""

    outer: Box
    inner: Box

    def __post_init__(self):
        if self.outer.dimension != self.inner.dimension:
            raise ConfigError("Outer and inner boxes differ in dimension")
        if not (np.all(self.inner.lower > self.outer.lower) and np.all(self.inner.upper < self.outer.upper)):
            raise ConfigError("Inner box must lie strictly inside the outer box")

    @property
    def dimension(self) -> int:
        return self.outer.dimension

    def contains(self, x: np.ndarray) -> bool:
        return self.outer.contains(x) and not self.inner.closure_contains(x)

    def sample_interior(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.outer.sample_interior(rng, count)

    def boundary_points(self, rng: np.random.Generator, samples: int = BOUNDARY_SAMPLES) -> np.ndarray:
        return np.vstack([self.outer.boundary_points(rng, samples), self.inner.boundary_points(rng, samples)])


# =============================================================================
# NEWTON
# =============================================================================

def fd_jacobian(fmap: DiscreteMap, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences, step relative to max(1, |x_i|)"""
    d = x.size
    jac = np.empty((d, d))
    for i in range(d):
        h = step * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        jac[:, i] = (fmap.evaluate(xp) - fmap.evaluate(xm)) / (2.0 * h)
    return jac


def _newton(fmap: DiscreteMap, x0: np.ndarray, tol: float) -> Optional[np.ndarray]:
    x = x0.copy()
    fx = fmap.evaluate(x)
    norm = float(np.max(np.abs(fx)))

    for _ in range(NEWTON_MAX_ITER):
        if norm <= tol:
            return x
        try:
            dx = np.linalg.solve(fd_jacobian(fmap, x), -fx)
        except np.linalg.LinAlgError:
            return None

        step = 1.0
        for _ in range(MAX_BACKTRACKS):
            x_try = x + step * dx
            f_try = fmap.evaluate(x_try)
            norm_try = float(np.max(np.abs(f_try)))
            if norm_try < norm:
                x, fx, norm = x_try, f_try, norm_try
                break
            step *= 0.5
        else:
            return None

    return x if norm <= tol else None


# =============================================================================
# DEGREE ESTIMATE
# =============================================================================

@dataclass
class DegreeEstimate:
    value: int
    zeros: List[np.ndarray] = field(default_factory=list)
    signs: List[int] = field(default_factory=list)
    irregular: List[np.ndarray] = field(default_factory=list)
    n_starts: int = 0
    n_converged: int = 0
    boundary_margin: float = 0.0

    @property
    def note(self) -> str:
        return (f"estimate: {self.n_starts} starts, {self.n_converged} converged, "
                f"{len(self.zeros)} distinct regular, {len(self.irregular)} irregular")

    def to_dict(self) -> dict:
        return {
            'value': self.value,
            'zeros': [z.tolist() for z in self.zeros],
            'signs': list(self.signs),
            'irregular': [z.tolist() for z in self.irregular],
            'n_starts': self.n_starts,
            'n_converged': self.n_converged,
            'boundary_margin': self.boundary_margin,
            'note': self.note,
        }


def boundary_margin(fmap: DiscreteMap, region, rng_seed: int = 0,
                    samples: int = BOUNDARY_SAMPLES) -> Tuple[float, np.ndarray]:
    """min over sampled boundary points of ||F||_inf, with the minimizing point"""
    points = region.boundary_points(np.random.default_rng(rng_seed), samples)
    norms = np.array([np.max(np.abs(fmap.evaluate(p))) for p in points])
    k = int(np.argmin(norms))
    return float(norms[k]), points[k]


def _merge_zeros(found: Sequence[np.ndarray], radius: float) -> List[np.ndarray]:
    ordered = sorted(found, key=lambda z: tuple(z))
    merged: List[np.ndarray] = []
    for z in ordered:
        if all(np.max(np.abs(z - m)) > radius for m in merged):
            merged.append(z)
    return merged


def estimate_degree(
    fmap: DiscreteMap,
    region,
    n_starts: int = DEFAULT_STARTS,
    rng_seed: int = 0,
    tol: float = DEGREE_TOL,
    boundary_samples: int = BOUNDARY_SAMPLES,
    workers: int = 0,
) -> DegreeEstimate:
    """
    Sum of sign(det J) over the distinct regular zeros found in the region.

    Raises:
        DegreeError: dimension above the dense regime
        AdmissibilityError: the map (nearly) vanishes on the sampled boundary
    """
    if fmap.dimension > MAX_DIMENSION:
        raise DegreeError(f"Degree estimation limited to {MAX_DIMENSION} unknowns, got {fmap.dimension}")
    if region.dimension != fmap.dimension:
        raise ConfigError(f"Region dimension {region.dimension} does not match map dimension {fmap.dimension}")

    margin, witness = boundary_margin(fmap, region, rng_seed, boundary_samples)
    if margin <= tol:
        raise AdmissibilityError(
            f"Map vanishes on the region boundary (margin {margin:.3e})", witness=witness.tolist(), margin=margin
        )

    rng = np.random.default_rng(rng_seed)
    starts = list(region.sample_interior(rng, n_starts))

    with ThreadPoolExecutor(max_workers=workers or default_workers()) as pool:
        results = list(pool.map(lambda x0: _newton(fmap, x0, tol), starts))

    converged = [x for x in results if x is not None]
    inside = [x for x in converged if region.contains(x)]
    zeros = _merge_zeros(inside, 100.0 * tol)

    estimate = DegreeEstimate(value=0, n_starts=n_starts, n_converged=len(converged), boundary_margin=margin)
    for z in zeros:
        det = float(np.linalg.det(fd_jacobian(fmap, z)))
        if abs(det) <= DET_THRESHOLD:
            logger.warning(f"Irregular zero found (|det J| = {abs(det):.3e}), excluded from the estimate")
            estimate.irregular.append(z)
            continue
        estimate.zeros.append(z)
        estimate.signs.append(1 if det > 0 else -1)
    estimate.value = int(sum(estimate.signs))

    logger.info(f"Degree {estimate.value} ({estimate.note})")
    return estimate


# =============================================================================
# HOMOTOPY SWEEP
# =============================================================================

@dataclass
class SweepReport:
    t_grid: List[float]
    margins: List[float]
    tol: float

    @property
    def min_margin(self) -> float:
        return min(self.margins)

    @property
    def admissible(self) -> bool:
        return self.min_margin > self.tol

    def to_dict(self) -> dict:
        return {
            't_grid': list(self.t_grid),
            'margins': list(self.margins),
            'min_margin': self.min_margin,
            'admissible': self.admissible,
        }


def homotopy_sweep(family: Callable[[float], DiscreteMap], t_grid: Sequence[float], region,
                   rng_seed: int = 0, samples: int = BOUNDARY_SAMPLES, tol: float = DEGREE_TOL) -> SweepReport:
    """Boundary margin of every member of the family; zero margins are reported, not raised"""
    if not t_grid or any(not 0.0 <= t <= 1.0 for t in t_grid):
        raise ConfigError(f"t_grid must be a non-empty subset of [0, 1]: {t_grid}")
    margins = [boundary_margin(family(t), region, rng_seed, samples)[0] for t in t_grid]
    report = SweepReport(list(t_grid), margins, tol)
    if not report.admissible:
        worst = t_grid[int(np.argmin(margins))]
        logger.warning(f"Homotopy not admissible at sampled resolution (margin {report.min_margin:.3e} at t={worst})")
    return report


# =============================================================================
# NO-SOLUTION WITNESS
# =============================================================================

@dataclass(frozen=True)
class NoSolutionWitness:
    """
    Testing A u = u+ + 1 with the quadrature weights gives
    -sum w u- = |Omega| > 0, impossible. The plain node sum does not work:
    the mirror stencil has row sums 1 but not column sums 1.
    identity_defect is the relative defect of sum w (A x) = sum w x over
    the probe fields.
    """

    holds: bool
    measure: float
    node_count: int
    identity_defect: float

    def to_dict(self) -> dict:
        return {
            'no_solution_t0': self.holds,
            'weighted_contradiction': self.measure,
            'node_count': self.node_count,
            'identity_defect': self.identity_defect,
        }


def check_no_solution_t0(op: NeumannOperator, rng_seed: int = 0, probes: int = 4) -> NoSolutionWitness:
    grid = op.grid
    rng = np.random.default_rng(rng_seed)
    fields = [np.ones(grid.node_count), grid.coordinates[:, 0]]
    fields += [rng.standard_normal(grid.node_count) for _ in range(probes)]

    w = op.weights
    defect = 0.0
    for x in fields:
        scale = float(np.dot(w, np.abs(op.apply(x))) + np.dot(w, np.abs(x)))
        defect = max(defect, weighted_mass_identity(op, x) / scale)

    holds = grid.measure > 0.0 and defect <= MASS_IDENTITY_TOL
    return NoSolutionWitness(holds=holds, measure=grid.measure, node_count=grid.node_count, identity_defect=defect)
