"""
GM Solver - Sign Solver Service
Positive solution inside the certified rectangle (clamped Gauss-Seidel
Picard iteration with Newton polish), the negative one by odd symmetry,
and the strict separation check against the lower corner.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from gmsolver.errors import ConvergenceError, SingularityError
from gmsolver.services.grid import Field, NeumannOperator
from gmsolver.services.linear import DEFAULT_TOL, solve_linear
from gmsolver.services.model import ProblemParams, jacobian_P, jacobian_Peps, residual, rhs_P
from gmsolver.services.subsup import RectanglePair

logger = logging.getLogger(__name__)

# =============================================================================
# CONSTANTS
# =============================================================================

SOLVER_TOL = 1e-8
SOLVER_MAX_ITER = 10000
MIN_OMEGA = 1.0 / 1024.0
NEWTON_POLISH_STEPS = 5
# Discrete strictness threshold for the separation check
SEPARATION_THRESHOLD = 1e-12


# =============================================================================
# SOLUTION
# =============================================================================

@dataclass
class Solution:
    u: Field
    v: Field
    residual_u: float
    residual_v: float
    iterations: int = 0
    converged: bool = False
    history: List[float] = field(default_factory=list)

    @property
    def residual(self) -> float:
        return max(self.residual_u, self.residual_v)

    def to_dict(self) -> dict:
        return {
            'converged': self.converged,
            'iterations': self.iterations,
            'residual_u': self.residual_u,
            'residual_v': self.residual_v,
            'u_min': self.u.min(), 'u_max': self.u.max(),
            'v_min': self.v.min(), 'v_max': self.v.max(),
        }


def newton_step(op: NeumannOperator, params: ProblemParams, u: Field, v: Field,
                epsilon: Optional[float] = None, forcing=None) -> tuple:
    """One full Newton correction (du, dv) for the coupled nodal system"""
    res = residual(op, params, u, v, epsilon, forcing)
    if epsilon is None:
        g1_u, g1_v, g2_u, g2_v = jacobian_P(params, u, v)
    else:
        g1_u, g1_v, g2_u, g2_v = jacobian_Peps(params, epsilon, u, v)
    a = op.matrix
    jac = sp.bmat([
        [a - sp.diags(g1_u), -sp.diags(g1_v)],
        [-sp.diags(g2_u), a - sp.diags(g2_v)],
    ], format='csc')
    rhs = -np.concatenate([res.r_u.values, res.r_v.values])
    delta = spla.spsolve(jac, rhs)
    n = op.size
    return delta[:n], delta[n:]


def _polish(op: NeumannOperator, params: ProblemParams, rect: RectanglePair,
            u: Field, v: Field, res: float, history: List[float]) -> tuple:
    """Newton on the unclamped system; a step is kept only inside the rectangle and if it helps"""
    for _ in range(NEWTON_POLISH_STEPS):
        try:
            du, dv = newton_step(op, params, u, v)
        except (SingularityError, RuntimeError) as e:
            logger.debug(f"Newton polish stopped: {e}")
            break
        if not (np.all(np.isfinite(du)) and np.all(np.isfinite(dv))):
            break
        u_new, v_new = u.with_values(u.values + du), v.with_values(v.values + dv)
        if not (rect.u.contains(u_new) and rect.v.contains(v_new)):
            break
        new_res = residual(op, params, u_new, v_new).sup
        if new_res >= res:
            break
        u, v, res = u_new, v_new, new_res
        history.append(res)
    return u, v, res


def solve_positive(
    op: NeumannOperator,
    params: ProblemParams,
    rect: RectanglePair,
    tol: float = SOLVER_TOL,
    max_iter: int = SOLVER_MAX_ITER,
    omega: float = 1.0,
    seed: Optional[tuple] = None,
    newton_polish: bool = True,
    linear_tol: float = DEFAULT_TOL,
) -> Solution:
    """
    Gauss-Seidel Picard iteration clamped into the rectangle:

        u <- clamp(u + omega (A^-1 g1(u, v) - u))
        v <- clamp(v + omega (A^-1 g2(u, v) - v))   (new u)

    omega is halved whenever the residual grows. Non-convergence is
    reported on the returned Solution, not raised.

    Args:
        rect: positive rectangle from build_rectangles
        seed: (u0, v0) fields, default the rectangle midpoint
    """
    if not 0.0 < omega <= 1.0:
        raise ValueError(f"Relaxation factor must lie in (0, 1]: {omega}")

    if seed is None:
        u, v = rect.u.midpoint(), rect.v.midpoint()
    else:
        u = seed[0].with_values(rect.u.clamp(seed[0].values))
        v = seed[1].with_values(rect.v.clamp(seed[1].values))

    inner_tol = min(linear_tol, 1e-2 * tol)
    res = residual(op, params, u, v).sup
    history = [res]
    iterations = 0

    while res > tol and iterations < max_iter:
        iterations += 1
        try:
            g1, _ = rhs_P(params, u, v)
            u_next = solve_linear(op, g1, tol=inner_tol)
            u = u.with_values(rect.u.clamp(u.values + omega * (u_next.values - u.values)))

            _, g2 = rhs_P(params, u, v)
            v_next = solve_linear(op, g2, tol=inner_tol)
            v = v.with_values(rect.v.clamp(v.values + omega * (v_next.values - v.values)))
        except ConvergenceError as e:
            logger.warning(f"Inner linear solve failed at iteration {iterations}: {e}")
            break

        new_res = residual(op, params, u, v).sup
        history.append(new_res)
        if new_res > res and omega > MIN_OMEGA:
            omega *= 0.5
            logger.debug(f"Residual increased to {new_res:.3e}, relaxation halved to {omega}")
        res = new_res

        if iterations % 100 == 0:
            logger.debug(f"Picard iteration {iterations}: residual {res:.3e}")

    if newton_polish:
        u, v, res = _polish(op, params, rect, u, v, res, history)

    final = residual(op, params, u, v)
    converged = final.sup <= tol
    if converged:
        logger.info(f"Positive solution converged in {iterations} iterations (residual {final.sup:.3e})")
    else:
        logger.warning(f"Positive solve did not converge: residual {final.sup:.3e} after {iterations} iterations")

    return Solution(
        u=u, v=v,
        residual_u=final.norm_u, residual_v=final.norm_v,
        iterations=iterations, converged=converged, history=history,
    )


def negate(sol: Solution) -> Solution:
    """(-u, -v): the system is odd, so residual norms carry over"""
    return Solution(
        u=-sol.u, v=-sol.v,
        residual_u=sol.residual_u, residual_v=sol.residual_v,
        iterations=sol.iterations, converged=sol.converged, history=list(sol.history),
    )


# =============================================================================
# SEPARATION
# =============================================================================

@dataclass(frozen=True)
class SeparationReport:
    margin_u: float
    worst_node: int
    margin_v: float
    in_rectangle: bool
    in_sign_box: bool
    threshold: float = SEPARATION_THRESHOLD

    @property
    def passed(self) -> bool:
        return self.margin_u > self.threshold

    def to_dict(self) -> dict:
        return {
            'pass': self.passed,
            'margin_u': self.margin_u,
            'worst_node': self.worst_node,
            'margin_v': self.margin_v,
            'in_rectangle': self.in_rectangle,
            'in_sign_box': self.in_sign_box,
            'threshold': self.threshold,
        }


def _is_negative(rect: RectanglePair) -> bool:
    return rect.u.upper.max() <= 0.0


def check_separation(sol: Solution, rect: RectanglePair) -> SeparationReport:
    """
    Strict separation from the inner corner of the rectangle:
    u > u_low for the positive rectangle, u < -u_low for the negative one.

    Also reports the v margin, containment in the rectangle and in the
    sign box [0, u_up] x [0, v_up] (or its negation).
    """
    u, v = sol.u.values, sol.v.values
    if _is_negative(rect):
        gap_u = rect.u.upper.values - u
        gap_v = rect.v.upper.values - v
        in_sign_box = bool(np.all(u <= 0.0) and np.all(u >= rect.u.lower.values)
                           and np.all(v <= 0.0) and np.all(v >= rect.v.lower.values))
    else:
        gap_u = u - rect.u.lower.values
        gap_v = v - rect.v.lower.values
        in_sign_box = bool(np.all(u >= 0.0) and np.all(u <= rect.u.upper.values)
                           and np.all(v >= 0.0) and np.all(v <= rect.v.upper.values))

    node = int(np.argmin(gap_u))
    return SeparationReport(
        margin_u=float(gap_u[node]),
        worst_node=node,
        margin_v=float(np.min(gap_v)),
        in_rectangle=rect.u.contains(sol.u) and rect.v.contains(sol.v),
        in_sign_box=in_sign_box,
    )
