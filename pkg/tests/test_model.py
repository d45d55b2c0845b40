import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmsolver.errors import ConfigError, SingularityError
from gmsolver.services.degree import CallableMap, fd_jacobian
from gmsolver.services.grid import Field
from gmsolver.services.model import (
    ProblemParams,
    TruncationEnv,
    chi_hat,
    chi_mu,
    f1,
    gamma_eps,
    jacobian_P,
    jacobian_Peps,
    manufacture,
    regularization_gap,
    residual,
    rhs_F,
    rhs_Fhat,
    rhs_P,
    rhs_Peps,
    sgn,
    trunc_T1,
    trunc_T2,
)

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)
positive = st.floats(min_value=1e-6, max_value=1e3)
eps_values = st.floats(min_value=1e-6, max_value=0.999)


def _env(grid, epsilon=0.1, bound=10.0):
    ones = Field.constant(grid, 1.0)
    return TruncationEnv(epsilon=epsilon, ubar=bound * ones, vbar=bound * ones, phi1=ones)


# === Parameters ===

@pytest.mark.parametrize("kwargs", [
    dict(alpha1=0.0, alpha2=0.5, beta1=0.0, beta2=0.0, rho=1.0),
    dict(alpha1=0.5, alpha2=1.0, beta1=0.0, beta2=0.0, rho=1.0),
    dict(alpha1=0.5, alpha2=0.5, beta1=-0.1, beta2=0.0, rho=1.0),
    dict(alpha1=0.5, alpha2=0.5, beta1=0.0, beta2=0.0, rho=0.0),
    dict(alpha1=0.6, alpha2=0.5, beta1=0.2, beta2=0.0, rho=1.0),
    dict(alpha1=0.5, alpha2=0.8, beta1=0.0, beta2=0.5, rho=1.0),
])
def test_invalid_params_rejected(kwargs):
    with pytest.raises(ConfigError):
        ProblemParams(**kwargs).validate()


def test_nodal_regime_requires_beta1_zero():
    params = ProblemParams(alpha1=0.5, alpha2=0.5, beta1=0.1, beta2=0.0, rho=1.0)
    params.validate()
    with pytest.raises(ConfigError):
        params.validate(require_nodal=True)


def test_exponent_conditions():
    params = ProblemParams(alpha1=0.5, alpha2=0.5, beta1=0.1, beta2=0.25, rho=1.0)
    assert params.condition_alpha == pytest.approx(0.7)
    assert params.proof_side_condition == pytest.approx(0.7)


# === Scalar maps ===

def test_sign_convention():
    assert sgn(0.0) == 1.0
    assert sgn(-1e-300) == -1.0
    assert f1(-3.0, scale=2.0) == -2.0
    assert isinstance(sgn(0.5), float)
    assert sgn(np.array([-1.0, 0.0, 1.0])).tolist() == [-1.0, 1.0, 1.0]


@pytest.mark.parametrize("s, expected", [(2.0, 0.15), (-1.0, -0.05), (0.0, 0.15)])
def test_gamma_eps(s, expected):
    assert gamma_eps(0.1, s) == pytest.approx(expected)


@pytest.mark.parametrize("u, expected", [(5.0, 2.0), (-5.0, -2.0), (1.0, 1.0)])
def test_trunc_T1(u, expected):
    assert trunc_T1(u, 2.0) == expected


@pytest.mark.parametrize("v, expected", [(0.0, 0.15), (-0.04, -0.09), (9.0, 1.15)])
def test_trunc_T2(v, expected):
    assert trunc_T2(0.1, v, 1.0) == pytest.approx(expected)


@pytest.mark.parametrize("s, expected", [(2.0, 3.0), (0.5, 1.5), (-2.0, -1.0), (-0.5, -0.5)])
def test_chi_hat(s, expected):
    assert chi_hat(1.0, s) == pytest.approx(expected)


@pytest.mark.parametrize("s, expected", [(0.5, 1.0), (1.0, 1.0), (1.5, 0.5), (2.0, 0.0), (-3.0, 0.0)])
def test_chi_mu(s, expected):
    assert chi_mu(1.0, s) == pytest.approx(expected)


def test_chi_mu_rejects_nonpositive_level():
    with pytest.raises(ValueError):
        chi_mu(0.0, 1.0)


@settings(max_examples=10000, deadline=None)
@given(eps=eps_values, v=finite, vbar=positive)
def test_trunc_T2_bounded_away_from_zero(eps, v, vbar):
    t = trunc_T2(eps, v, vbar)
    assert abs(t) >= 0.5 * eps
    assert abs(t) <= 1.5 * eps + vbar
    assert sgn(t) == sgn(v)


@settings(max_examples=1000, deadline=None)
@given(u=finite, ubar=positive)
def test_trunc_T1_bounds(u, ubar):
    t = trunc_T1(u, ubar)
    assert abs(t) <= ubar
    assert sgn(t) == sgn(u)


@settings(max_examples=10000, deadline=None)
@given(mu=st.floats(min_value=1e-3, max_value=1e3), s=finite)
def test_chi_mu_range(mu, s):
    value = chi_mu(mu, s)
    assert 0.0 <= value <= 1.0
    if abs(s) <= mu:
        assert value == 1.0
    if abs(s) >= 2.0 * mu:
        assert value == 0.0


@settings(max_examples=10000, deadline=None)
@given(phi=st.floats(min_value=1e-3, max_value=1e3), s=finite)
def test_chi_hat_sandwich(phi, s):
    bound = max(s, phi)
    assert (2.0 / 3.0) * chi_hat(phi, s) <= bound + 1e-12 * abs(bound)


# === Right-hand sides ===

def test_rhs_P_constants(small_op, constant_params):
    grid = small_op.grid
    g1, g2 = rhs_P(constant_params, Field.constant(grid, 4.0), Field.constant(grid, 2.0))
    assert g1.values == pytest.approx(4.0)
    assert g2.values == pytest.approx(2.0)

    g1, g2 = rhs_P(constant_params, Field.constant(grid, 0.0), Field.constant(grid, 1.0))
    assert g1.values == pytest.approx(constant_params.rho)
    assert np.all(g2.values == 0.0)


def test_rhs_P_singular_node(small_op):
    params = ProblemParams(alpha1=0.5, alpha2=0.5, beta1=0.0, beta2=0.25, rho=1.0)
    values = np.ones(small_op.size)
    values[5] = 0.0
    with pytest.raises(SingularityError) as info:
        rhs_P(params, Field.constant(small_op.grid, 1.0), Field(small_op.grid, values))
    assert info.value.node == 5


def test_rhs_Peps_examples(small_op):
    grid = small_op.grid
    params = ProblemParams(alpha1=0.5, alpha2=0.5, beta1=0.0, beta2=0.5, rho=1.0)
    zero = Field.constant(grid, 0.0)
    g1, g2 = rhs_Peps(params, 0.1, zero, zero)
    assert g1.values == pytest.approx(1.0)
    assert np.all(g2.values == 0.0)

    # denominator |v + gamma(v)| = 0.09
    _, g2 = rhs_Peps(params, 0.1, Field.constant(grid, 1.0), Field.constant(grid, -0.04))
    assert g2.values == pytest.approx(0.09 ** -0.5)


def test_rhs_Peps_requires_beta1_zero(small_op):
    params = ProblemParams(alpha1=0.5, alpha2=0.5, beta1=0.1, beta2=0.0, rho=1.0)
    one = Field.constant(small_op.grid, 1.0)
    with pytest.raises(ConfigError):
        rhs_Peps(params, 0.1, one, one)


def test_rhs_F_endpoints(small_op, nodal_params):
    grid = small_op.grid
    env = _env(grid)
    rng = np.random.default_rng(2)
    u = Field(grid, rng.standard_normal(small_op.size))
    v = Field(grid, rng.standard_normal(small_op.size))

    F1, F2 = rhs_F(nodal_params, env, 0.0, u, v)
    assert np.array_equal(F1.values, np.maximum(u.values, 0.0) + 1.0)
    assert np.array_equal(F2.values, np.maximum(v.values, 0.0) + 1.0)

    F1, F2 = rhs_F(nodal_params, env, 1.0, u, v)
    g1, g2 = rhs_Peps(nodal_params, env.epsilon, u, v)
    assert F1.values == pytest.approx(g1.values, rel=1e-14)
    assert F2.values == pytest.approx(g2.values, rel=1e-14)


def test_rhs_F_midpoint(small_op):
    params = ProblemParams(alpha1=0.5, alpha2=0.5, beta1=0.0, beta2=0.0, rho=1.0)
    zero = Field.constant(small_op.grid, 0.0)
    F1, _ = rhs_F(params, _env(small_op.grid), 0.5, zero, zero)
    assert F1.values == pytest.approx(1.0)


def test_rhs_F_rejects_t_outside_unit_interval(small_op, nodal_params):
    zero = Field.constant(small_op.grid, 0.0)
    with pytest.raises(ValueError):
        rhs_F(nodal_params, _env(small_op.grid), 1.5, zero, zero)


def test_rhs_Fhat_at_start_of_homotopy(small_op, nodal_params):
    grid = small_op.grid
    env = _env(grid)
    lam = 1.0
    phi = env.phi1
    F1, F2 = rhs_Fhat(nodal_params, env, lam, 0.0, phi, phi)
    assert F1.values == pytest.approx(lam * phi.values, rel=1e-14)
    assert F2.values == pytest.approx(lam * phi.values, rel=1e-14)

    zero = Field.constant(grid, 0.0)
    F1, _ = rhs_Fhat(nodal_params, env, lam, 0.0, zero, zero)
    assert F1.values == pytest.approx(lam, rel=1e-14)


def test_truncation_env_validation(small_op):
    ones = Field.constant(small_op.grid, 1.0)
    with pytest.raises(ConfigError):
        TruncationEnv(epsilon=1.0, ubar=ones, vbar=ones, phi1=ones)
    with pytest.raises(ConfigError):
        TruncationEnv(epsilon=0.1, ubar=0.0 * ones, vbar=ones, phi1=ones)
    env = TruncationEnv(epsilon=0.1, ubar=ones, vbar=ones, phi1=ones)
    assert env.with_epsilon(0.05).epsilon == 0.05


# === Residuals ===

def test_constant_solution_residual(op_1d, constant_params):
    grid = op_1d.grid
    u, v = Field.constant(grid, 4.0), Field.constant(grid, 2.0)
    assert residual(op_1d, constant_params, u, v).sup <= 1e-12
    assert residual(op_1d, constant_params, -u, -v).sup <= 1e-12


def test_odd_symmetry_of_residual(small_op):
    params = ProblemParams(alpha1=0.4, alpha2=0.3, beta1=0.1, beta2=0.25, rho=0.5)
    rng = np.random.default_rng(7)
    grid = small_op.grid
    for _ in range(100):
        u = Field(grid, rng.standard_normal(small_op.size))
        v = Field(grid, rng.uniform(0.1, 2.0, small_op.size) * rng.choice([-1.0, 1.0], small_op.size))
        plus = residual(small_op, params, u, v)
        minus = residual(small_op, params, -u, -v)
        assert np.max(np.abs(minus.r_u.values + plus.r_u.values)) <= 1e-13
        assert np.max(np.abs(minus.r_v.values + plus.r_v.values)) <= 1e-13


def test_manufactured_forcing_is_exact(small_op, nodal_params):
    grid = small_op.grid
    u = Field.from_function(grid, lambda x: 0.3 * np.cos(np.pi * x))
    v = Field.from_function(grid, lambda x: 0.2 * np.cos(np.pi * x) + 0.01)
    forcing = manufacture(small_op, nodal_params, u, v, epsilon=0.25)
    assert residual(small_op, nodal_params, u, v, epsilon=0.25, forcing=forcing).sup == 0.0


def test_regularization_gap_scales_with_epsilon(small_op):
    params = ProblemParams(alpha1=0.5, alpha2=0.5, beta1=0.0, beta2=0.25, rho=1.0)
    grid = small_op.grid
    u = Field.constant(grid, 4.0)
    v = Field.from_function(grid, lambda x: 1.0 + x)
    gaps = [regularization_gap(params, eps, u, v) for eps in (1e-2, 5e-3, 2.5e-3)]
    for coarse, fine in zip(gaps, gaps[1:]):
        assert fine / coarse == pytest.approx(0.5, abs=0.1)


def test_jacobian_matches_finite_differences(small_op):
    params = ProblemParams(alpha1=0.5, alpha2=0.6, beta1=0.1, beta2=0.2, rho=1.0)
    grid = small_op.grid
    u = Field.from_function(grid, lambda x: 1.0 + x)
    v = Field.from_function(grid, lambda x: 2.0 - x)
    g1_u, g1_v, g2_u, g2_v = jacobian_P(params, u, v)

    h = 1e-6
    up, um = rhs_P(params, u + h, v), rhs_P(params, u - h, v)
    vp, vm = rhs_P(params, u, v + h), rhs_P(params, u, v - h)
    assert g1_u == pytest.approx((up[0] - um[0]).values / (2 * h), rel=1e-6)
    assert g2_u == pytest.approx((up[1] - um[1]).values / (2 * h), rel=1e-6)
    assert g1_v == pytest.approx((vp[0] - vm[0]).values / (2 * h), rel=1e-6)
    assert g2_v == pytest.approx((vp[1] - vm[1]).values / (2 * h), rel=1e-6)


def test_regularized_jacobian_matches_finite_differences(nodal_op, nodal_params):
    grid = nodal_op.grid
    n = nodal_op.size
    u = Field.from_function(grid, lambda x: 0.5 * np.cos(np.pi * x))
    v = Field.from_function(grid, lambda x: 0.4 * np.cos(np.pi * x))

    def stacked(x):
        g1, g2 = rhs_Peps(nodal_params, 0.25, u.with_values(x[:n]), v.with_values(x[n:]))
        return np.concatenate([g1.values, g2.values])

    fd = fd_jacobian(CallableMap(2 * n, stacked), np.concatenate([u.values, v.values]))
    g1_u, g1_v, g2_u, g2_v = jacobian_Peps(nodal_params, 0.25, u, v)
    expected = np.block([[np.diag(g1_u), np.diag(g1_v)], [np.diag(g2_u), np.diag(g2_v)]])
    assert fd == pytest.approx(expected, rel=1e-6, abs=1e-8)


def test_regularized_jacobian_requires_beta1_zero(small_op):
    params = ProblemParams(alpha1=0.5, alpha2=0.5, beta1=0.1, beta2=0.0, rho=1.0)
    ones = Field.constant(small_op.grid, 1.0)
    with pytest.raises(ConfigError):
        jacobian_Peps(params, 0.25, ones, ones)
