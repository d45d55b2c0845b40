"""
GM Solver - Sub/Supersolution Service
Builds the ordered rectangle [z, C y] x [z, C y] from three linear Neumann
problems and certifies the sub/supersolution inequalities nodewise.

    A w = 1,  A y = 1 + rho,  A z = C^-2,  (u_low, v_low) = (z, z),
    (u_up, v_up) = (C y, C y)
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from gmsolver.errors import ConstantsError, EnvelopeError, RectangleError
from gmsolver.services.grid import Field, NeumannOperator
from gmsolver.services.linear import DEFAULT_TOL, EigenPair, solve_linear
from gmsolver.services.model import ProblemParams

logger = logging.getLogger(__name__)

# =============================================================================
# CONSTANTS
# =============================================================================

DEFAULT_C0 = 2.0
MAX_DOUBLINGS = 40
# Margins within this many ulps of the compared values are snapped to 0
ROUNDING_ULPS = 8.0
HAT_T_GRID = tuple(k / 10.0 for k in range(11))

INEQUALITY_IDS = (
    'supersolution_u',
    'supersolution_v',
    'subsolution_u_source',
    'subsolution_v_chain',
    'subsolution_u',
    'subsolution_v',
)


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class AuxiliarySolutions:
    w: Field
    y: Field
    z: Field
    c0: float
    C: float

    def to_dict(self) -> dict:
        return {
            'C': self.C,
            'c0': self.c0,
            'w_min': self.w.min(), 'w_max': self.w.max(),
            'y_min': self.y.min(), 'y_max': self.y.max(),
            'z_min': self.z.min(), 'z_max': self.z.max(),
        }


@dataclass(frozen=True)
class OrderedRectangle:
    """Nodewise box [lower, upper] for one component"""

    lower: Field
    upper: Field

    def __post_init__(self):
        gap = self.upper.values - self.lower.values
        if np.any(gap < 0.0):
            node = int(np.argmin(gap))
            raise RectangleError(
                f"Rectangle lower bound exceeds upper bound at node {node} "
                f"({self.lower.values[node]!r} > {self.upper.values[node]!r})",
                node=node,
            )

    def contains(self, x: Field, slack: float = 0.0) -> bool:
        return bool(np.all(x.values >= self.lower.values - slack) and np.all(x.values <= self.upper.values + slack))

    def midpoint(self) -> Field:
        return self.lower.with_values(0.5 * (self.lower.values + self.upper.values))

    def clamp(self, values: np.ndarray) -> np.ndarray:
        return np.clip(values, self.lower.values, self.upper.values)

    def negated(self) -> 'OrderedRectangle':
        return OrderedRectangle(-self.upper, -self.lower)


@dataclass(frozen=True)
class RectanglePair:
    """[u_low, u_up] x [v_low, v_up]"""

    u: OrderedRectangle
    v: OrderedRectangle

    def negated(self) -> 'RectanglePair':
        return RectanglePair(self.u.negated(), self.v.negated())


@dataclass(frozen=True)
class CertificateEntry:
    passed: bool
    worst_node: int
    margin: float

    def to_dict(self) -> dict:
        return {'pass': self.passed, 'worst_node': self.worst_node, 'margin': self.margin}


@dataclass
class Certificate:
    entries: Dict[str, CertificateEntry]
    info: Dict[str, dict] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(entry.passed for entry in self.entries.values())

    def failed(self) -> List[str]:
        return [name for name, entry in self.entries.items() if not entry.passed]

    def to_dict(self) -> dict:
        return {
            'pass': self.passed,
            'inequalities': {name: entry.to_dict() for name, entry in self.entries.items()},
            'info': self.info,
        }


# =============================================================================
# CONSTANTS SELECTION
# =============================================================================

def constant_lower_bound(params: ProblemParams, lambda1: float, mu_bar: float) -> float:
    """max{1, 1/sqrt(lambda1 mu_bar), 1/sqrt(|f1| rho)}; C must exceed it strictly"""
    if lambda1 <= 0 or mu_bar <= 0:
        raise ValueError(f"lambda1 and mu_bar must be positive: {lambda1}, {mu_bar}")
    return max(1.0, 1.0 / math.sqrt(lambda1 * mu_bar), 1.0 / math.sqrt(params.f1_scale * params.rho))


def choose_constants(
    params: ProblemParams,
    lambda1: float,
    mu_bar: float,
    C: Optional[float] = None,
    c0: Optional[float] = None,
) -> Tuple[float, float]:
    """
    Initial constants (C, c0).

    C defaults to twice the lower bound, c0 to 2. A forced C must exceed
    the lower bound strictly, a forced c0 must exceed 1.
    """
    lower = constant_lower_bound(params, lambda1, mu_bar)

    if C is None:
        C = 2.0 * lower
    elif C <= lower:
        raise ConstantsError(f"C = {C} does not exceed the lower bound {lower}")

    if c0 is None:
        c0 = DEFAULT_C0
    elif c0 <= 1.0:
        raise ConstantsError(f"c0 must exceed 1, got {c0}")

    logger.debug(f"Constants chosen: C={C!r}, c0={c0!r} (lower bound {lower!r})")
    return float(C), float(c0)


# =============================================================================
# AUXILIARY SOLUTIONS AND RECTANGLES
# =============================================================================

def _check_envelope(name: str, lower: np.ndarray, value: np.ndarray, upper: np.ndarray) -> None:
    for side, gap in (('lower', value - lower), ('upper', upper - value)):
        if np.any(gap < 0.0):
            node = int(np.argmin(gap))
            raise EnvelopeError(
                f"Envelope {name} ({side} bound) violated at node {node} by {-gap[node]:.3e}",
                inequality=f"{name}_{side}",
                node=node,
            )


def build_auxiliary(
    op: NeumannOperator,
    params: ProblemParams,
    eigen: EigenPair,
    C: float,
    c0: float,
    tol: float = DEFAULT_TOL,
) -> AuxiliarySolutions:
    """
    Solve for w, y, z and check their envelopes against phi1:

        phi1/c0 <= w <= c0 phi1
        phi1/c0 <= y <= (1 + rho) c0 phi1
        phi1/(c0 C^2) <= z <= y

    Raises:
        EnvelopeError: naming the violated envelope and node
    """
    grid = op.grid
    w = solve_linear(op, Field.constant(grid, 1.0), tol=tol)
    y = solve_linear(op, Field.constant(grid, 1.0 + params.rho), tol=tol)
    z = solve_linear(op, Field.constant(grid, C ** -2), tol=tol)

    phi = eigen.phi1.values
    _check_envelope('ew', phi / c0, w.values, c0 * phi)
    _check_envelope('ey', phi / c0, y.values, (1.0 + params.rho) * c0 * phi)
    _check_envelope('ez', phi / (c0 * C * C), z.values, y.values)

    return AuxiliarySolutions(w=w, y=y, z=z, c0=c0, C=C)


def build_rectangles(aux: AuxiliarySolutions) -> Tuple[RectanglePair, RectanglePair]:
    """Positive rectangle (z, C y) for both components and its negation"""
    upper = aux.C * aux.y
    positive = RectanglePair(OrderedRectangle(aux.z, upper), OrderedRectangle(aux.z, upper))
    return positive, positive.negated()


# =============================================================================
# CERTIFICATE
# =============================================================================

def _entry(lhs: np.ndarray, rhs: np.ndarray) -> CertificateEntry:
    """Entry for lhs >= rhs nodewise"""
    lhs, rhs = np.broadcast_arrays(np.asarray(lhs, dtype=float), np.asarray(rhs, dtype=float))
    margin = lhs - rhs
    scale = np.maximum(np.abs(lhs), np.abs(rhs))
    snap = np.abs(margin) <= ROUNDING_ULPS * np.finfo(float).eps * scale
    margin = np.where(snap, 0.0, margin)
    node = int(np.argmin(margin))
    worst = float(margin[node])
    return CertificateEntry(passed=worst >= 0.0, worst_node=node, margin=worst)


def _min_entry(entries: Sequence[CertificateEntry]) -> CertificateEntry:
    worst = min(entries, key=lambda e: e.margin)
    return CertificateEntry(passed=all(e.passed for e in entries), worst_node=worst.worst_node, margin=worst.margin)


def _v_chain(params: ProblemParams, op: NeumannOperator, aux: AuxiliarySolutions,
             eigen: EigenPair, rect: RectanglePair) -> CertificateEntry:
    """
    A v_low <= s2 bound(mu) <= s2 bound(phi1) <= s2 z^d with d = a2 - b2 and
    s2 = |f2|, split on the sign of d.
    """
    d = params.alpha2 - params.beta2
    C, c0, rho, s2 = aux.C, aux.c0, params.rho, params.f2_scale
    n = op.size
    phi = eigen.phi1.values

    if d >= 0.0:
        by_mu = np.full(n, eigen.mu_underbar / (c0 * C * C)) ** d
        by_phi = (phi / (c0 * C * C)) ** d
    else:
        by_mu = np.full(n, (1.0 + rho) * c0 * eigen.mu_bar) ** d
        by_phi = ((1.0 + rho) * c0 * phi) ** d

    a_v = op.apply(rect.v.lower.values)
    z_pow = aux.z.values ** d
    return _min_entry([
        _entry(s2 * by_mu, a_v),
        _entry(s2 * by_phi, s2 * by_mu),
        _entry(s2 * z_pow, s2 * by_phi),
    ])


def _hat_lower_bounds(params: ProblemParams, aux: AuxiliarySolutions, eigen: EigenPair,
                      t_grid: Sequence[float]) -> Dict[str, dict]:
    C, c0 = aux.C, aux.c0
    base = eigen.lambda1 * eigen.mu_underbar
    target = C ** -2
    y_sup = aux.y.sup_norm()
    source_v = params.f2_scale * C ** -(2.0 * params.alpha2 + params.beta2) \
        * (eigen.mu_underbar / c0) ** params.alpha2 / (1.5 + y_sup) ** params.beta2

    margins_u = [t * params.f1_scale * params.rho + (1.0 - t) * base - target for t in t_grid]
    margins_v = [t * source_v + (1.0 - t) * base - target for t in t_grid]
    return {
        'hat_lower_u': {'pass': min(margins_u) > 0.0, 'margin': min(margins_u), 't_grid': list(t_grid)},
        'hat_lower_v': {'pass': min(margins_v) > 0.0, 'margin': min(margins_v), 't_grid': list(t_grid)},
    }


def certify(
    op: NeumannOperator,
    params: ProblemParams,
    eigen: EigenPair,
    aux: AuxiliarySolutions,
    rect: RectanglePair,
    t_grid: Sequence[float] = HAT_T_GRID,
) -> Certificate:
    """
    Check the six sub/supersolution inequalities at the worst corner of the
    rectangle, nodewise. Never raises on a failed inequality.
    """
    u_low, u_up = rect.u.lower.values, rect.u.upper.values
    v_low, v_up = rect.v.lower.values, rect.v.upper.values
    a1, a2, b1, b2, rho = params.alpha1, params.alpha2, params.beta1, params.beta2, params.rho
    s1, s2 = params.f1_scale, params.f2_scale

    entries = {
        'supersolution_u': _entry(op.apply(u_up), s1 * (u_up ** a1 / v_low ** b1 + rho)),
        'supersolution_v': _entry(op.apply(v_up), s2 * u_up ** a2 / v_up ** b2),
        'subsolution_u_source': _entry(np.full(op.size, s1 * rho), op.apply(u_low)),
        'subsolution_v_chain': _v_chain(params, op, aux, eigen, rect),
        'subsolution_u': _entry(s1 * (u_low ** a1 / v_up ** b1 + rho), op.apply(u_low)),
        'subsolution_v': _entry(s2 * u_low ** a2 / v_low ** b2, op.apply(v_low)),
    }

    cert = Certificate(entries=entries, info=_hat_lower_bounds(params, aux, eigen, t_grid))
    if cert.passed:
        logger.info(f"Certificate passed for C={aux.C!r}, c0={aux.c0!r}")
    else:
        logger.warning(f"Certificate failed for C={aux.C!r}: {', '.join(cert.failed())}")
    return cert


# =============================================================================
# CALIBRATION
# =============================================================================

@dataclass
class Calibration:
    C: float
    c0: float
    doublings: int
    aux: AuxiliarySolutions
    positive: RectanglePair
    negative: RectanglePair
    certificate: Certificate

    def to_dict(self) -> dict:
        return {
            'C': self.C,
            'c0': self.c0,
            'doublings': self.doublings,
            'auxiliary': self.aux.to_dict(),
            'certificate': self.certificate.to_dict(),
        }


def certify_constants(op: NeumannOperator, params: ProblemParams, eigen: EigenPair,
                      C: float, c0: float, tol: float = DEFAULT_TOL) -> Calibration:
    """Certify exactly the given constants (no selection, no doubling)"""
    aux = build_auxiliary(op, params, eigen, C, c0, tol)
    positive, negative = build_rectangles(aux)
    cert = certify(op, params, eigen, aux, positive)
    return Calibration(C, c0, 0, aux, positive, negative, cert)


def calibrate_constants(
    op: NeumannOperator,
    params: ProblemParams,
    eigen: EigenPair,
    C: Optional[float] = None,
    c0: Optional[float] = None,
    max_doublings: int = MAX_DOUBLINGS,
    tol: float = DEFAULT_TOL,
) -> Calibration:
    """
    Double C on a failed certificate and c0 on a failed envelope until the
    certificate passes or max_doublings is used up.

    Returns the last calibration; its certificate reports failure if the
    doublings ran out.
    """
    C, c0 = choose_constants(params, eigen.lambda1, eigen.mu_bar, C, c0)
    doublings = 0

    while True:
        try:
            calib = certify_constants(op, params, eigen, C, c0, tol)
        except EnvelopeError as e:
            if doublings >= max_doublings:
                raise
            logger.debug(f"Envelope {e.inequality} failed at node {e.node}, doubling c0 to {2 * c0!r}")
            c0 *= 2.0
            doublings += 1
            continue

        calib.doublings = doublings
        if calib.certificate.passed or doublings >= max_doublings:
            if not calib.certificate.passed:
                logger.warning(f"Certificate still failing after {doublings} doublings")
            return calib

        logger.debug(f"Doubling C to {2 * C!r} ({', '.join(calib.certificate.failed())} failed)")
        C *= 2.0
        doublings += 1
