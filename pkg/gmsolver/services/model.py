"""
GM Solver - Model Service
Problem data, sign functions, nonlinear right-hand sides and truncations
for the sign-coupled activator-inhibitor system

    A u = f1(v) (|u|^a1 / |v|^b1 + rho)
    A v = f2(u) |u|^a2 / |v|^b2

with A = -Laplacian + I under zero-flux boundary conditions.

All scalar maps accept floats or numpy arrays; floats in, floats out.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from gmsolver.errors import ConfigError, SingularityError
from gmsolver.services.grid import Field, NeumannOperator

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Smallest |u| used when differentiating |u|^a (a < 1 blows up at 0)
JACOBIAN_FLOOR = 1e-12


def _out(result: np.ndarray, *inputs) -> ArrayLike:
    if all(np.ndim(x) == 0 for x in inputs):
        return float(result)
    return result


def _abs_pow(x: np.ndarray, p: float) -> np.ndarray:
    return np.abs(x) ** p


# =============================================================================
# PARAMETERS
# =============================================================================

@dataclass(frozen=True)
class ProblemParams:
    """
    Exponents and source of the system.

    f1_scale / f2_scale give |f_i|; the sign is always sgn of the coupled
    component. literal_f2_exponents switches the second homotopy equation
    to exponents (a1, b1).
    """

    alpha1: float
    alpha2: float
    beta1: float
    beta2: float
    rho: float
    f1_scale: float = 1.0
    f2_scale: float = 1.0
    literal_f2_exponents: bool = False

    @property
    def condition_alpha(self) -> float:
        """max{a1 + 2 b1, a2 + b2/2}, must be < 1"""
        return max(self.alpha1 + 2.0 * self.beta1, self.alpha2 + 0.5 * self.beta2)

    @property
    def proof_side_condition(self) -> float:
        """max{a1 + 2 b1, a2 - b2}, the variant used when majorizing the rectangle"""
        return max(self.alpha1 + 2.0 * self.beta1, self.alpha2 - self.beta2)

    def validate(self, require_nodal: bool = False) -> 'ProblemParams':
        for name in ('alpha1', 'alpha2'):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1): {value}")
        for name in ('beta1', 'beta2'):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1): {value}")
        if not self.rho > 0.0:
            raise ConfigError(f"rho must be positive: {self.rho}")
        if not (self.f1_scale > 0.0 and self.f2_scale > 0.0):
            raise ConfigError("f1_scale and f2_scale must be positive")
        if self.condition_alpha >= 1.0:
            raise ConfigError(
                f"Exponent condition violated: max(a1 + 2 b1, a2 + b2/2) = {self.condition_alpha} >= 1"
            )
        if require_nodal and self.beta1 != 0.0:
            raise ConfigError(f"Regularized / nodal computations require beta1 = 0, got {self.beta1}")
        return self

    def to_dict(self) -> dict:
        return {
            'alpha1': self.alpha1,
            'alpha2': self.alpha2,
            'beta1': self.beta1,
            'beta2': self.beta2,
            'rho': self.rho,
            'f1_scale': self.f1_scale,
            'f2_scale': self.f2_scale,
            'literal_f2_exponents': self.literal_f2_exponents,
            'condition_alpha': self.condition_alpha,
            'proof_side_condition': self.proof_side_condition,
        }


# =============================================================================
# SIGN FUNCTIONS AND TRUNCATIONS
# =============================================================================

def sgn(s: ArrayLike) -> ArrayLike:
    """+1 for s >= 0, -1 for s < 0"""
    return _out(np.where(np.asarray(s) >= 0.0, 1.0, -1.0), s)


def f1(s: ArrayLike, scale: float = 1.0) -> ArrayLike:
    return _out(scale * np.asarray(sgn(s)), s)


def f2(s: ArrayLike, scale: float = 1.0) -> ArrayLike:
    return _out(scale * np.asarray(sgn(s)), s)


def gamma_eps(epsilon: float, s: ArrayLike) -> ArrayLike:
    """epsilon (1/2 + sgn(s))"""
    return _out(epsilon * (0.5 + np.asarray(sgn(s))), s)


def trunc_T1(u: ArrayLike, ubar: ArrayLike) -> ArrayLike:
    """Clamp u into [-ubar, ubar]"""
    ubar_arr = np.asarray(ubar)
    return _out(np.clip(np.asarray(u), -ubar_arr, ubar_arr), u, ubar)


def trunc_T2(epsilon: float, v: ArrayLike, vbar: ArrayLike) -> ArrayLike:
    """gamma_eps(v) + clamp of v into [-vbar, vbar]; |result| >= epsilon / 2"""
    vbar_arr = np.asarray(vbar)
    v_arr = np.asarray(v)
    return _out(np.asarray(gamma_eps(epsilon, v_arr)) + np.clip(v_arr, -vbar_arr, vbar_arr), v, vbar)


def chi_hat(phi: ArrayLike, s: ArrayLike) -> ArrayLike:
    """
    (3/2) s above phi, (1/2 + sgn s) phi on [-phi, phi], (1/2) s below -phi.
    """
    s_arr = np.asarray(s, dtype=float)
    phi_arr = np.asarray(phi, dtype=float)
    middle = (0.5 + np.asarray(sgn(s_arr))) * phi_arr
    result = np.where(s_arr >= phi_arr, 1.5 * s_arr, np.where(s_arr <= -phi_arr, 0.5 * s_arr, middle))
    return _out(result, phi, s)


def chi_mu(mu: float, s: ArrayLike) -> ArrayLike:
    """Cut-off: 1 on [-mu, mu], linear ramp to 0 at |s| = 2 mu, 0 beyond"""
    if mu <= 0:
        raise ValueError(f"mu must be positive: {mu}")
    a = np.abs(np.asarray(s, dtype=float))
    result = np.where(a >= 2.0 * mu, 0.0, np.where(a <= mu, 1.0, 2.0 - a / mu))
    return _out(result, s)


# =============================================================================
# TRUNCATION ENVIRONMENT
# =============================================================================

@dataclass(frozen=True)
class TruncationEnv:
    """
    Data the homotopy right-hand sides are truncated with.

    ubar / vbar: upper corners of the positive rectangle
    ulow / vlow: lower corners, i.e. the half-widths of the nodal box
    phi1: principal eigenvector, mu_chi: cut-off level of chi_mu
    """

    epsilon: float
    ubar: Field
    vbar: Field
    phi1: Field
    mu_chi: float = 0.1
    ulow: Optional[Field] = None
    vlow: Optional[Field] = None

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1): {self.epsilon}")
        if self.ubar.min() <= 0.0 or self.vbar.min() <= 0.0:
            raise ConfigError("Truncation bounds ubar, vbar must be positive at every node")
        if self.mu_chi <= 0.0:
            raise ConfigError(f"mu_chi must be positive: {self.mu_chi}")

    def with_epsilon(self, epsilon: float) -> 'TruncationEnv':
        return TruncationEnv(epsilon, self.ubar, self.vbar, self.phi1, self.mu_chi, self.ulow, self.vlow)


# =============================================================================
# RIGHT-HAND SIDES
# =============================================================================

def _check_nonzero(v: np.ndarray, what: str) -> None:
    zero = np.flatnonzero(v == 0.0)
    if zero.size:
        node = int(zero[0])
        raise SingularityError(f"{what} vanishes at node {node}", node=node)


def rhs_P(params: ProblemParams, u: Field, v: Field) -> Tuple[Field, Field]:
    """Right-hand sides (g1, g2) of the singular system"""
    uv, vv = u.values, v.values
    if params.beta1 > 0.0 or params.beta2 > 0.0:
        _check_nonzero(vv, "Denominator |v|")

    g1 = f1(vv, params.f1_scale) * (_abs_pow(uv, params.alpha1) / _abs_pow(vv, params.beta1) + params.rho)
    g2 = f2(uv, params.f2_scale) * _abs_pow(uv, params.alpha2) / _abs_pow(vv, params.beta2)
    return u.with_values(g1), v.with_values(g2)


def _regularized_denominator(epsilon: float, v: np.ndarray) -> np.ndarray:
    d = v + gamma_eps(epsilon, v)
    if np.min(np.abs(d)) < 0.5 * epsilon * (1.0 - 1e-12):
        node = int(np.argmin(np.abs(d)))
        raise SingularityError(f"|v + gamma_eps(v)| fell below epsilon/2 at node {node}", node=node)
    return d


def _check_epsilon(epsilon: float) -> None:
    if not 0.0 < epsilon < 1.0:
        raise ConfigError(f"epsilon must lie in (0, 1): {epsilon}")


def rhs_Peps(params: ProblemParams, epsilon: float, u: Field, v: Field) -> Tuple[Field, Field]:
    """Right-hand sides of the regularized system (needs beta1 = 0)"""
    if params.beta1 != 0.0:
        raise ConfigError(f"Regularized system requires beta1 = 0, got {params.beta1}")
    _check_epsilon(epsilon)

    uv, vv = u.values, v.values
    d = _regularized_denominator(epsilon, vv)
    g1 = f1(vv, params.f1_scale) * (_abs_pow(uv, params.alpha1) + params.rho)
    g2 = f2(uv, params.f2_scale) * _abs_pow(uv, params.alpha2) / _abs_pow(d, params.beta2)
    return u.with_values(g1), v.with_values(g2)


def _second_exponents(params: ProblemParams) -> Tuple[float, float]:
    if params.literal_f2_exponents:
        return params.alpha1, params.beta1
    return params.alpha2, params.beta2


def _truncated_parts(params: ProblemParams, env: TruncationEnv, u: Field, v: Field,
                     exponents: Tuple[float, float]) -> Tuple[np.ndarray, np.ndarray]:
    uv, vv = u.values, v.values
    t1 = trunc_T1(uv, env.ubar.values)
    t2 = trunc_T2(env.epsilon, vv, env.vbar.values)
    a, b = exponents
    part1 = f1(vv, params.f1_scale) * (_abs_pow(t1, params.alpha1) + params.rho)
    part2 = f2(uv, params.f2_scale) * _abs_pow(t1, a) / _abs_pow(t2, b)
    return part1, part2


def rhs_F(params: ProblemParams, env: TruncationEnv, t: float, u: Field, v: Field) -> Tuple[Field, Field]:
    """
    Homotopy from the decoupled problem A u = u+ + 1, A v = v+ + 1 (t = 0)
    to the truncated regularized system (t = 1).
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"Homotopy parameter must lie in [0, 1]: {t}")
    part1, part2 = _truncated_parts(params, env, u, v, _second_exponents(params))
    uv, vv = u.values, v.values
    F1 = t * part1 + (1.0 - t) * (np.maximum(uv, 0.0) + 1.0)
    F2 = t * part2 + (1.0 - t) * (np.maximum(vv, 0.0) + 1.0)
    return u.with_values(F1), v.with_values(F2)


def rhs_Fhat(params: ProblemParams, env: TruncationEnv, lambda1: float, t: float,
             u: Field, v: Field) -> Tuple[Field, Field]:
    """
    Homotopy from A w = (2/3) lambda1 chi_hat(w) (t = 0), solved by phi1,
    to the truncated regularized system (t = 1).
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"Homotopy parameter must lie in [0, 1]: {t}")
    part1, part2 = _truncated_parts(params, env, u, v, (params.alpha2, params.beta2))
    phi = env.phi1.values
    scale = (2.0 / 3.0) * (1.0 - t) * lambda1
    F1 = t * part1 + scale * chi_hat(phi, u.values)
    F2 = t * part2 + scale * chi_hat(phi, v.values)
    return u.with_values(F1), v.with_values(F2)


# =============================================================================
# RESIDUALS AND MANUFACTURED FORCINGS
# =============================================================================

@dataclass(frozen=True)
class Residual:
    r_u: Field
    r_v: Field

    @property
    def norm_u(self) -> float:
        return self.r_u.sup_norm()

    @property
    def norm_v(self) -> float:
        return self.r_v.sup_norm()

    @property
    def sup(self) -> float:
        return max(self.norm_u, self.norm_v)


def system_rhs(params: ProblemParams, u: Field, v: Field, epsilon: Optional[float] = None) -> Tuple[Field, Field]:
    if epsilon is None:
        return rhs_P(params, u, v)
    return rhs_Peps(params, epsilon, u, v)


def residual(op: NeumannOperator, params: ProblemParams, u: Field, v: Field,
             epsilon: Optional[float] = None,
             forcing: Optional[Tuple[Field, Field]] = None) -> Residual:
    """
    r_u = (A u - g1) - c1, r_v = (A v - g2) - c2.

    epsilon selects the regularized right-hand side; forcing adds the
    manufactured terms (c1, c2).
    """
    g1, g2 = system_rhs(params, u, v, epsilon)
    r_u = op.apply(u.values) - g1.values
    r_v = op.apply(v.values) - g2.values
    if forcing is not None:
        r_u = r_u - forcing[0].values
        r_v = r_v - forcing[1].values
    return Residual(u.with_values(r_u), v.with_values(r_v))


def manufacture(op: NeumannOperator, params: ProblemParams, u_star: Field, v_star: Field,
                epsilon: Optional[float] = None) -> Tuple[Field, Field]:
    """Forcings (c1, c2) making (u_star, v_star) an exact solution of the forced system"""
    res = residual(op, params, u_star, v_star, epsilon)
    return res.r_u, res.r_v


def regularization_gap(params: ProblemParams, epsilon: float, u: Field, v: Field) -> float:
    """sup-norm distance between the regularized and the singular right-hand sides"""
    g1, g2 = rhs_P(params, u, v)
    h1, h2 = rhs_Peps(params, epsilon, u, v)
    return max((g1 - h1).sup_norm(), (g2 - h2).sup_norm())


# =============================================================================
# JACOBIANS (nodal partial derivatives; sign factors locally constant)
# =============================================================================

def _d_abs_pow(x: np.ndarray, p: float) -> np.ndarray:
    """d/dx |x|^p with |x| floored away from 0"""
    if p == 0.0:
        return np.zeros_like(x)
    a = np.maximum(np.abs(x), JACOBIAN_FLOOR)
    return p * a ** (p - 1.0) * np.where(x >= 0.0, 1.0, -1.0)


Jacobian = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]


def _jacobian(params: ProblemParams, u: Field, v: Field, epsilon: Optional[float]) -> Jacobian:
    uv, vv = u.values, v.values
    s1 = f1(vv, params.f1_scale)
    s2 = f2(uv, params.f2_scale)

    if epsilon is None:
        if params.beta1 > 0.0 or params.beta2 > 0.0:
            _check_nonzero(vv, "Denominator |v|")
        d1, d2 = vv, vv
    else:
        d1 = np.ones_like(vv)
        d2 = _regularized_denominator(epsilon, vv)

    beta1 = params.beta1 if epsilon is None else 0.0
    inv1 = _abs_pow(d1, -beta1)
    inv2 = _abs_pow(d2, -params.beta2)

    g1_u = s1 * _d_abs_pow(uv, params.alpha1) * inv1
    g1_v = s1 * _abs_pow(uv, params.alpha1) * _d_abs_pow(d1, -beta1) if epsilon is None else np.zeros_like(vv)
    g2_u = s2 * _d_abs_pow(uv, params.alpha2) * inv2
    g2_v = s2 * _abs_pow(uv, params.alpha2) * _d_abs_pow(d2, -params.beta2)
    return g1_u, g1_v, g2_u, g2_v


def jacobian_P(params: ProblemParams, u: Field, v: Field) -> Jacobian:
    """Nodal derivatives (dg1/du, dg1/dv, dg2/du, dg2/dv) of rhs_P"""
    return _jacobian(params, u, v, None)


def jacobian_Peps(params: ProblemParams, epsilon: float, u: Field, v: Field) -> Jacobian:
    """Same for rhs_Peps; dg1/dv vanishes away from the sign change of v"""
    if params.beta1 != 0.0:
        raise ConfigError(f"Regularized system requires beta1 = 0, got {params.beta1}")
    _check_epsilon(epsilon)
    return _jacobian(params, u, v, epsilon)
