"""
GM Solver - Linear Service
Jacobi-preconditioned CG for A x = f and inverse iteration for the
principal eigenpair of A.

CG runs on the symmetrized system (W A) x = W f, W being the trapezoid
weights. Convergence is always judged on the unsymmetrized residual
||A x - f||_inf.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np
import scipy.linalg as la

from gmsolver.errors import ConvergenceError, DegreeError, GMError
from gmsolver.services.grid import Field, NeumannOperator, as_values

logger = logging.getLogger(__name__)

# =============================================================================
# CONSTANTS
# =============================================================================

DEFAULT_TOL = 1e-10
EIGEN_MAX_ITER = 500
# Residual replacement period (recompute r = b - S x from scratch)
RESIDUAL_REFRESH = 50
# Safety factor on the floating-point floor of ||A x - f||_inf
ROUNDING_FACTOR = 64.0
DENSE_LIMIT = 64


def _rounding_floor(op: NeumannOperator, x: np.ndarray, f: np.ndarray) -> float:
    """Smallest residual the residual evaluation itself can resolve"""
    norm_a = 4.0 * float(np.max(np.abs(op.diagonal)))
    eps = np.finfo(float).eps
    return ROUNDING_FACTOR * eps * (norm_a * float(np.max(np.abs(x))) + float(np.max(np.abs(f))))


def solve_linear(
    op: NeumannOperator,
    rhs: Union[Field, np.ndarray],
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
    x0: Optional[np.ndarray] = None,
) -> Union[Field, np.ndarray]:
    """
    Solve A x = f.

    Args:
        op: Neumann operator (W A must be SPD)
        rhs: right-hand side f (Field or raw nodal values)
        tol: bound on ||A x - f||_inf
        max_iter: CG iteration cap (default 10 n + 100)
        x0: initial guess (default f itself, exact for constants)

    Returns:
        Solution of the same type as rhs

    Raises:
        ConvergenceError: residual above tol after max_iter iterations
    """
    if tol <= 0:
        raise ValueError(f"Tolerance must be positive: {tol}")

    f = as_values(rhs)
    n = op.size
    max_iter = max_iter or 10 * n + 100

    s = op.stiffness
    b = op.weights * f
    inv_diag = 1.0 / s.diagonal()

    x = np.array(f if x0 is None else x0, dtype=float)
    history: List[float] = []

    def true_residual(xk: np.ndarray) -> float:
        return float(np.max(np.abs(op.apply(xk) - f)))

    res = true_residual(x)
    history.append(res)
    if res <= tol:
        return _wrap(rhs, x)

    r = b - s @ x
    z = inv_diag * r
    p = z.copy()
    rz = float(np.dot(r, z))

    for k in range(1, max_iter + 1):
        sp_ = s @ p
        denom = float(np.dot(p, sp_))
        if denom <= 0.0:
            break
        alpha = rz / denom
        x += alpha * p

        if k % RESIDUAL_REFRESH == 0:
            r = b - s @ x
        else:
            r -= alpha * sp_

        res = true_residual(x)
        history.append(res)
        if res <= tol or res <= _rounding_floor(op, x, f):
            logger.debug(f"CG converged in {k} iterations (residual {res:.3e})")
            return _wrap(rhs, x)

        z = inv_diag * r
        rz_new = float(np.dot(r, z))
        if rz_new == 0.0:
            break
        p = z + (rz_new / rz) * p
        rz = rz_new

    floor = _rounding_floor(op, x, f)
    if res <= floor:
        logger.debug(f"CG stopped at rounding floor {floor:.3e} (residual {res:.3e}, tol {tol:.1e})")
        return _wrap(rhs, x)

    raise ConvergenceError(
        f"CG did not converge: residual {res:.3e} > tol {tol:.1e} after {len(history) - 1} iterations",
        history,
    )


def _wrap(like: Union[Field, np.ndarray], values: np.ndarray) -> Union[Field, np.ndarray]:
    if isinstance(like, Field):
        return like.with_values(values)
    return values


# =============================================================================
# EIGENPAIR
# =============================================================================

@dataclass(frozen=True)
class EigenPair:
    """Principal eigenpair, phi1 sup-normalized (max phi1 = 1)"""

    lambda1: float
    phi1: Field
    iterations: int = 0
    residual: float = 0.0

    @property
    def mu_bar(self) -> float:
        return self.phi1.max()

    @property
    def mu_underbar(self) -> float:
        return self.phi1.min()

    def to_dict(self) -> dict:
        return {
            'lambda1': self.lambda1,
            'mu_bar': self.mu_bar,
            'mu_underbar': self.mu_underbar,
            'iterations': self.iterations,
            'residual': self.residual,
        }


def _rayleigh(op: NeumannOperator, phi: np.ndarray) -> float:
    w = op.weights
    return float(np.dot(w * phi, op.apply(phi)) / np.dot(w * phi, phi))


def principal_eigenpair(op: NeumannOperator, tol: float = DEFAULT_TOL, max_iter: int = EIGEN_MAX_ITER) -> EigenPair:
    """
    Smallest eigenvalue of A with its positive eigenvector (inverse iteration).

    Starts from the constant field, which is already exact for the pure
    Neumann operator.
    """
    phi = np.ones(op.size)
    lam = _rayleigh(op, phi)
    inner_tol = max(tol * 1e-2, 1e-15)

    for k in range(max_iter + 1):
        res = float(np.max(np.abs(op.apply(phi) - lam * phi)))
        if res <= tol:
            if np.min(phi) <= 0.0:
                raise GMError(f"Principal eigenvector changes sign (min {np.min(phi):.3e})")
            logger.debug(f"Inverse iteration converged: lambda1={lam!r} after {k} iterations")
            return EigenPair(lambda1=lam, phi1=Field(op.grid, phi), iterations=k, residual=res)

        y = solve_linear(op, phi, tol=inner_tol)
        peak = y[np.argmax(np.abs(y))]
        phi = y / peak
        lam = _rayleigh(op, phi)

    raise ConvergenceError(f"Inverse iteration did not converge in {max_iter} iterations (residual {res:.3e})", [res])


def dense_eigenpair(op: NeumannOperator) -> EigenPair:
    """Oracle: generalized symmetric eigensolve of (W A, W) on small grids"""
    if op.size > 10 * DENSE_LIMIT:
        raise GMError(f"Dense eigensolve limited to {10 * DENSE_LIMIT} nodes, got {op.size}")
    values, vectors = la.eigh(op.stiffness.toarray(), np.diag(op.weights))
    phi = vectors[:, 0]
    phi = phi / phi[np.argmax(np.abs(phi))]
    return EigenPair(lambda1=float(values[0]), phi1=Field(op.grid, phi))


def dense_resolvent(op: NeumannOperator) -> np.ndarray:
    """A^{-1} as a dense matrix (degree regime only)"""
    if op.size > DENSE_LIMIT:
        raise DegreeError(f"Dense resolvent limited to {DENSE_LIMIT} nodes, got {op.size}")
    return la.inv(op.to_dense())
