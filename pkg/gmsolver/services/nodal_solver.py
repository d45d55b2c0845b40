"""
GM Solver - Nodal Solver Service
Regularized system inside the nodal box [-u_low, u_low] x [-v_low, v_low],
continuation in epsilon, the multistart locator and the sign-synchrony
diagnostics.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import psutil

from gmsolver.errors import ConfigError, ConvergenceError, SingularityError
from gmsolver.services.grid import Field, NeumannOperator, integrate
from gmsolver.services.linear import DEFAULT_TOL, solve_linear
from gmsolver.services.model import (
    ProblemParams,
    TruncationEnv,
    chi_mu,
    gamma_eps,
    manufacture,
    residual,
    rhs_Peps,
)
from gmsolver.services.sign_solver import Solution, newton_step
from gmsolver.services.subsup import AuxiliarySolutions

logger = logging.getLogger(__name__)

# =============================================================================
# CONSTANTS
# =============================================================================

DEFAULT_EPSILONS = tuple(2.0 ** -k for k in range(1, 7))
CONTINUATION_TOL = 1e-10
CONTINUATION_MAX_ITER = 200
N_SEEDS = 16
MAX_BACKTRACKS = 12
RETRY_CANDIDATES = 3
# A component changes sign iff it goes below -NODALITY_FACTOR * tol and above +NODALITY_FACTOR * tol
NODALITY_FACTOR = 10.0
# Seed amplitude relative to the nodal box
SEED_AMPLITUDE = 0.5


def default_workers() -> int:
    return psutil.cpu_count(logical=True) or 1


def radius_R(epsilon: float, params: ProblemParams, aux: AuxiliarySolutions) -> float:
    """A-priori sup-norm radius 2 (3 eps / 2 + C ||y|| + rho + 1)"""
    return 2.0 * (1.5 * epsilon + aux.C * aux.y.sup_norm() + params.rho + 1.0)


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class ContinuationSchedule:
    epsilons: Tuple[float, ...] = DEFAULT_EPSILONS
    tol: float = CONTINUATION_TOL
    max_iter: int = CONTINUATION_MAX_ITER
    warm_start: bool = True

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if not eps:
            raise ConfigError("Continuation schedule is empty")
        if any(not 0.0 < e < 1.0 for e in eps):
            raise ConfigError(f"Continuation epsilons must lie in (0, 1): {eps}")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"Continuation epsilons must be strictly decreasing: {eps}")
        if self.tol <= 0 or self.max_iter < 1:
            raise ConfigError("Continuation tol must be positive and max_iter at least 1")
        object.__setattr__(self, 'epsilons', eps)


@dataclass(frozen=True)
class NodalBox:
    """[-u_half, u_half] x [-v_half, v_half]"""

    u_half: Field
    v_half: Field

    @classmethod
    def from_env(cls, env: TruncationEnv) -> 'NodalBox':
        if env.ulow is None or env.vlow is None:
            raise ConfigError("Truncation environment carries no lower corners (ulow, vlow)")
        return cls(env.ulow, env.vlow)

    def project(self, u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        uh, vh = self.u_half.values, self.v_half.values
        return np.clip(u, -uh, uh), np.clip(v, -vh, vh)

    def contains(self, u: Field, v: Field) -> bool:
        return bool(np.all(np.abs(u.values) <= self.u_half.values)
                    and np.all(np.abs(v.values) <= self.v_half.values))


@dataclass
class RegularizedSolution(Solution):
    epsilon: float = 0.0
    min_denominator: float = float('inf')

    def to_dict(self) -> dict:
        data = super().to_dict()
        data.update({'epsilon': self.epsilon, 'min_denominator': self.min_denominator})
        return data


@dataclass
class NodalCandidate:
    u_star: Field
    v_star: Field
    epsilons: List[float] = field(default_factory=list)
    residuals: List[float] = field(default_factory=list)
    distances: List[float] = field(default_factory=list)
    min_denominators: List[float] = field(default_factory=list)
    complete: bool = True
    failed_epsilon: Optional[float] = None

    def to_dict(self) -> dict:
        steps = []
        for k, eps in enumerate(self.epsilons):
            steps.append({
                'epsilon': eps,
                'residual': self.residuals[k],
                'distance': self.distances[k - 1] if k > 0 else None,
                'min_denominator': self.min_denominators[k],
            })
        return {
            'complete': self.complete,
            'failed_epsilon': self.failed_epsilon,
            'steps': steps,
        }


# =============================================================================
# REGULARIZED SOLVE
# =============================================================================

def _min_denominator(epsilon: float, v: np.ndarray) -> float:
    return float(np.min(np.abs(v + gamma_eps(epsilon, v))))


def _picard_step(op: NeumannOperator, params: ProblemParams, epsilon: float, u: Field, v: Field,
                 forcing, linear_tol: float) -> Tuple[np.ndarray, np.ndarray]:
    g1, g2 = rhs_Peps(params, epsilon, u, v)
    c1 = forcing[0].values if forcing is not None else 0.0
    c2 = forcing[1].values if forcing is not None else 0.0
    u_next = solve_linear(op, g1.values + c1, tol=linear_tol)
    v_next = solve_linear(op, g2.values + c2, tol=linear_tol)
    return u_next, v_next


def solve_regularized(
    op: NeumannOperator,
    params: ProblemParams,
    env: TruncationEnv,
    epsilon: float,
    seed: Tuple[Field, Field],
    tol: float = CONTINUATION_TOL,
    max_iter: int = CONTINUATION_MAX_ITER,
    forcing: Optional[Tuple[Field, Field]] = None,
    linear_tol: float = DEFAULT_TOL,
) -> RegularizedSolution:
    """
    Damped Newton for A u = g1 + c1, A v = g2 + c2 (regularized right-hand
    sides), iterates projected into the nodal box. A Picard step replaces
    Newton whenever backtracking finds no decrease.

    Non-convergence is reported on the returned solution.
    """
    if params.beta1 != 0.0:
        raise ConfigError(f"Regularized solve requires beta1 = 0, got {params.beta1}")
    box = NodalBox.from_env(env)

    u_vals, v_vals = box.project(seed[0].values, seed[1].values)
    u, v = seed[0].with_values(u_vals), seed[1].with_values(v_vals)
    min_denominator = _min_denominator(epsilon, v.values)

    res = residual(op, params, u, v, epsilon, forcing).sup
    history = [res]
    iterations = 0

    while res > tol and iterations < max_iter:
        iterations += 1
        accepted = False

        try:
            du, dv = newton_step(op, params, u, v, epsilon, forcing)
        except (SingularityError, RuntimeError) as e:
            logger.debug(f"Newton step failed at iteration {iterations}: {e}")
            du = dv = None

        if du is not None and np.all(np.isfinite(du)) and np.all(np.isfinite(dv)):
            step = 1.0
            for _ in range(MAX_BACKTRACKS):
                trial = box.project(u.values + step * du, v.values + step * dv)
                u_try, v_try = u.with_values(trial[0]), v.with_values(trial[1])
                try_res = residual(op, params, u_try, v_try, epsilon, forcing).sup
                if try_res < res:
                    u, v, res = u_try, v_try, try_res
                    accepted = True
                    break
                step *= 0.5

        if not accepted:
            try:
                u_next, v_next = _picard_step(op, params, epsilon, u, v, forcing, linear_tol)
            except ConvergenceError as e:
                logger.warning(f"Picard fallback failed at iteration {iterations}: {e}")
                break
            u_next, v_next = box.project(u_next, v_next)
            u, v = u.with_values(u_next), v.with_values(v_next)
            res = residual(op, params, u, v, epsilon, forcing).sup

        min_denominator = min(min_denominator, _min_denominator(epsilon, v.values))
        history.append(res)
        logger.debug(f"eps={epsilon!r} iteration {iterations}: residual {res:.3e}")

    final = residual(op, params, u, v, epsilon, forcing)
    converged = final.sup <= tol
    if not converged:
        logger.warning(f"Regularized solve (eps={epsilon!r}) stopped at residual {final.sup:.3e}")

    return RegularizedSolution(
        u=u, v=v,
        residual_u=final.norm_u, residual_v=final.norm_v,
        iterations=iterations, converged=converged, history=history,
        epsilon=epsilon, min_denominator=min_denominator,
    )


# =============================================================================
# CONTINUATION
# =============================================================================

def continuation(
    op: NeumannOperator,
    params: ProblemParams,
    env: TruncationEnv,
    schedule: ContinuationSchedule,
    seed: Tuple[Field, Field],
    manufactured: Optional[Tuple[Field, Field]] = None,
) -> NodalCandidate:
    """
    Chain of regularized solves along the schedule.

    With a manufactured pair the forcing is recomputed for every epsilon so
    that the pair solves each forced system exactly. A failed step is
    retried from the three best earlier solutions before the candidate is
    flagged incomplete.
    """
    history: List[RegularizedSolution] = []
    candidate: Optional[NodalCandidate] = None
    start = seed

    for eps in schedule.epsilons:
        forcing = manufacture(op, params, manufactured[0], manufactured[1], eps) if manufactured else None
        sol = solve_regularized(op, params, env, eps, start, schedule.tol, schedule.max_iter, forcing)

        if not sol.converged and history:
            for prev in sorted(history, key=lambda s: s.residual)[:RETRY_CANDIDATES]:
                logger.info(f"Retrying eps={eps!r} from the eps={prev.epsilon!r} solution")
                sol = solve_regularized(op, params, env, eps, (prev.u, prev.v),
                                        schedule.tol, schedule.max_iter, forcing)
                if sol.converged:
                    break

        if candidate is None:
            candidate = NodalCandidate(u_star=sol.u, v_star=sol.v)
        else:
            candidate.distances.append(max((sol.u - candidate.u_star).sup_norm(),
                                           (sol.v - candidate.v_star).sup_norm()))
            candidate.u_star, candidate.v_star = sol.u, sol.v
        candidate.epsilons.append(eps)
        candidate.residuals.append(sol.residual)
        candidate.min_denominators.append(sol.min_denominator)

        if not sol.converged:
            candidate.complete = False
            candidate.failed_epsilon = eps
            logger.warning(f"Continuation stopped: eps={eps!r} did not converge")
            break

        history.append(sol)
        start = (sol.u, sol.v) if schedule.warm_start else seed
        logger.info(f"Continuation step eps={eps!r} converged (residual {sol.residual:.3e})")

    return candidate


# =============================================================================
# DIAGNOSTICS
# =============================================================================

@dataclass(frozen=True)
class SynchronyReport:
    min_uv: float
    positive_fraction: float
    sup_u: float
    sup_v: float
    u_changes_sign: bool
    v_changes_sign: bool
    zero_nodes_u: int
    zero_nodes_v: int
    tol: float

    @property
    def nontrivial(self) -> bool:
        return self.sup_u > self.tol and self.sup_v > self.tol

    @property
    def synchronized(self) -> bool:
        return self.min_uv >= -self.tol

    @property
    def nodal(self) -> bool:
        return self.u_changes_sign and self.v_changes_sign

    @property
    def passed(self) -> bool:
        return self.synchronized and self.nontrivial

    def to_dict(self) -> dict:
        return {
            'pass': self.passed,
            'min_uv': self.min_uv,
            'positive_fraction': self.positive_fraction,
            'sup_u': self.sup_u,
            'sup_v': self.sup_v,
            'u_changes_sign': self.u_changes_sign,
            'v_changes_sign': self.v_changes_sign,
            'nodal': self.nodal,
            'zero_nodes_u': self.zero_nodes_u,
            'zero_nodes_v': self.zero_nodes_v,
            'tol': self.tol,
        }


def _changes_sign(x: np.ndarray, tol: float) -> bool:
    threshold = NODALITY_FACTOR * tol
    return bool(np.min(x) < -threshold and np.max(x) > threshold)


def sign_synchrony_report(u: Field, v: Field, tol: float = CONTINUATION_TOL) -> SynchronyReport:
    """Sign synchrony (u v >= -tol), nontriviality and nodality of a pair"""
    uv, vv = u.values, v.values
    report = SynchronyReport(
        min_uv=float(np.min(uv * vv)),
        positive_fraction=float(np.mean(uv > 0.0)),
        sup_u=u.sup_norm(),
        sup_v=v.sup_norm(),
        u_changes_sign=_changes_sign(uv, tol),
        v_changes_sign=_changes_sign(vv, tol),
        zero_nodes_u=int(np.sum(np.abs(uv) <= tol)),
        zero_nodes_v=int(np.sum(np.abs(vv) <= tol)),
        tol=tol,
    )
    if not report.synchronized:
        logger.warning(f"Components of opposite sign detected (min u*v = {report.min_uv:.3e})")
    return report


def singular_mass_diagnostic(params: ProblemParams, epsilon: float, u: Field, v: Field,
                             mu_list: Sequence[float]) -> List[Dict[str, float]]:
    """
    Per mu: quadrature of |g2| over {|v| <= mu} and of |g2| chi_mu(v),
    g2 the regularized second right-hand side.
    """
    _, g2 = rhs_Peps(params, epsilon, u, v)
    magnitude = np.abs(g2.values)
    rows = []
    for mu in mu_list:
        indicator = (np.abs(v.values) <= mu).astype(float)
        rows.append({
            'mu': float(mu),
            'indicator_mass': integrate(g2.with_values(magnitude * indicator)),
            'chi_mass': integrate(g2.with_values(magnitude * chi_mu(mu, v.values))),
        })
    return rows


# =============================================================================
# MULTISTART LOCATOR
# =============================================================================

def classify(u: Field, v: Field, tol: float) -> str:
    uv, vv = u.values, v.values
    if np.all(uv > 0.0) and np.all(vv > 0.0):
        return 'positive'
    if np.all(uv < 0.0) and np.all(vv < 0.0):
        return 'negative'
    report = sign_synchrony_report(u, v, tol)
    if report.nodal and report.passed:
        return 'nodal_synchronized'
    return 'other'


def build_seeds(box: NodalBox, n_seeds: int = N_SEEDS, rng_seed: int = 0) -> List[Tuple[Field, Field]]:
    """
    Cosine modes along the first axis paired symmetrically (u = v) and
    antisymmetrically (u = -v), the two constants, then random fields.
    """
    grid = box.u_half.grid
    x = grid.coordinates[:, 0] / grid.extents[0]
    uh, vh = SEED_AMPLITUDE * box.u_half.values, SEED_AMPLITUDE * box.v_half.values
    rng = np.random.default_rng(rng_seed)

    seeds: List[Tuple[np.ndarray, np.ndarray]] = []
    for k in (1, 2, 3):
        mode = np.cos(k * np.pi * x)
        seeds.append((uh * mode, vh * mode))
        seeds.append((uh * mode, -vh * mode))
    seeds.append((uh, vh))
    seeds.append((-uh, -vh))
    while len(seeds) < n_seeds:
        seeds.append((uh * rng.uniform(-1.0, 1.0, grid.node_count),
                      vh * rng.uniform(-1.0, 1.0, grid.node_count)))

    return [(Field(grid, a), Field(grid, b)) for a, b in seeds[:n_seeds]]


@dataclass
class LocatedSolution:
    seed_id: int
    solution: RegularizedSolution
    label: str

    def to_dict(self) -> dict:
        data = self.solution.to_dict()
        data.update({'seed_id': self.seed_id, 'label': self.label})
        return data


@dataclass
class LocatorReport:
    epsilon: float
    n_seeds: int
    converged: int
    solutions: List[LocatedSolution]

    def labels(self) -> List[str]:
        return [s.label for s in self.solutions]

    @property
    def nodal_found(self) -> bool:
        return 'nodal_synchronized' in self.labels()

    def to_dict(self) -> dict:
        return {
            'epsilon': self.epsilon,
            'n_seeds': self.n_seeds,
            'converged': self.converged,
            'distinct': len(self.solutions),
            'nodal_found': self.nodal_found,
            'note': None if self.nodal_found else 'no nodal branch found',
            'solutions': [s.to_dict() for s in self.solutions],
        }


def locate_solutions(
    op: NeumannOperator,
    params: ProblemParams,
    env: TruncationEnv,
    epsilon: float,
    n_seeds: int = N_SEEDS,
    rng_seed: int = 0,
    tol: float = CONTINUATION_TOL,
    max_iter: int = CONTINUATION_MAX_ITER,
    workers: int = 0,
) -> LocatorReport:
    """
    Multistart search in the nodal box. Seeds run concurrently; converged
    solutions are merged in seed order, duplicates (sup distance <= 100 tol)
    dropped.
    """
    box = NodalBox.from_env(env)
    seeds = build_seeds(box, n_seeds, rng_seed)

    def run(seed):
        return solve_regularized(op, params, env, epsilon, seed, tol, max_iter)

    with ThreadPoolExecutor(max_workers=workers or default_workers()) as pool:
        results = list(pool.map(run, seeds))

    distinct: List[LocatedSolution] = []
    converged = 0
    for seed_id, sol in enumerate(results):
        if not sol.converged:
            continue
        converged += 1
        duplicate = any(
            max((sol.u - d.solution.u).sup_norm(), (sol.v - d.solution.v).sup_norm()) <= 100.0 * tol
            for d in distinct
        )
        if not duplicate:
            distinct.append(LocatedSolution(seed_id, sol, classify(sol.u, sol.v, tol)))

    logger.info(f"Locator eps={epsilon!r}: {converged}/{len(seeds)} converged, {len(distinct)} distinct")
    return LocatorReport(epsilon, len(seeds), converged, distinct)
