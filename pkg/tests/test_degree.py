import numpy as np
import pytest

from gmsolver.errors import AdmissibilityError, ConfigError, DegreeError
from gmsolver.services.degree import (
    Box,
    BoxDifference,
    CallableMap,
    CompactMap,
    check_no_solution_t0,
    estimate_degree,
    fd_jacobian,
    homotopy_sweep,
    map_eval,
)
from gmsolver.services.grid import Field, assemble_neumann_operator, build_grid
from gmsolver.services.model import ProblemParams, TruncationEnv
from gmsolver.services.nodal_solver import radius_R


@pytest.fixture
def coarse(calibrated):
    """4-node grid, C = 2, z = 1/4, y = 2"""
    op = assemble_neumann_operator(build_grid(1, [1.0], [4]))
    params = ProblemParams(alpha1=0.5, alpha2=0.5, beta1=0.0, beta2=0.25, rho=1.0)
    eigen, calib = calibrated(op, params)
    env = TruncationEnv(
        epsilon=0.5,
        ubar=calib.positive.u.upper, vbar=calib.positive.v.upper,
        phi1=eigen.phi1, ulow=calib.positive.u.lower, vlow=calib.positive.v.lower,
    )
    R = radius_R(0.5, params, calib.aux)
    return op, params, env, eigen, R


def _cubic():
    return CallableMap(1, lambda x: x ** 3 - x, name='cubic')


# === Synthetic maps ===

def test_identity_has_degree_one():
    estimate = estimate_degree(CallableMap(4, lambda x: x), Box.symmetric(np.full(4, 2.0)), n_starts=16)
    assert estimate.value == 1
    assert len(estimate.zeros) == 1
    assert np.max(np.abs(estimate.zeros[0])) <= 1e-8
    assert estimate.boundary_margin == pytest.approx(2.0)


@pytest.mark.parametrize("d, expected", [(5, -1), (6, 1)])
def test_negated_identity(d, expected):
    estimate = estimate_degree(CallableMap(d, lambda x: -x), Box.symmetric(np.ones(d)), n_starts=16)
    assert estimate.value == expected


def test_domain_additivity():
    outer = Box.symmetric([2.0])
    inner = Box.symmetric([0.5])
    whole = estimate_degree(_cubic(), outer)
    middle = estimate_degree(_cubic(), inner)
    ring = estimate_degree(_cubic(), BoxDifference(outer, inner))

    assert whole.value == 1
    assert sorted(whole.signs) == [-1, 1, 1]
    assert middle.value == -1
    assert ring.value == 2
    assert whole.value == middle.value + ring.value


def test_estimate_independent_of_start_sampling():
    first = estimate_degree(_cubic(), Box.symmetric([2.0]), rng_seed=0)
    second = estimate_degree(_cubic(), Box.symmetric([2.0]), rng_seed=5)
    assert first.value == second.value
    assert len(first.zeros) == len(second.zeros) == 3
    for a, b in zip(first.zeros, second.zeros):
        assert a == pytest.approx(b, abs=1e-8)


def test_zero_on_boundary_is_not_admissible():
    with pytest.raises(AdmissibilityError) as info:
        estimate_degree(CallableMap(2, lambda x: x - 1.0), Box.symmetric([1.0, 1.0]))
    assert info.value.margin <= 1e-10
    assert info.value.witness == [1.0, 1.0]


def test_dimension_limit():
    with pytest.raises(DegreeError):
        estimate_degree(CallableMap(17, lambda x: x), Box.symmetric(np.ones(17)))


def test_region_must_match_map():
    with pytest.raises(ConfigError):
        estimate_degree(CallableMap(2, lambda x: x), Box.symmetric(np.ones(3)))


def test_boxes_validated():
    with pytest.raises(ConfigError):
        Box(np.ones(2), np.ones(2))
    with pytest.raises(ConfigError):
        BoxDifference(Box.symmetric([1.0]), Box.symmetric([1.0]))


def test_box_difference_membership():
    ring = BoxDifference(Box.symmetric([2.0, 2.0]), Box.symmetric([0.5, 0.5]))
    assert ring.contains(np.array([1.0, 0.0]))
    assert not ring.contains(np.array([0.5, 0.0]))
    assert not ring.contains(np.array([2.0, 0.0]))


def test_fd_jacobian_of_linear_map():
    m = np.array([[2.0, 1.0, 0.0], [0.0, -1.0, 3.0], [1.0, 0.0, 1.0]])
    jac = fd_jacobian(CallableMap(3, lambda x: m @ x), np.array([0.3, -2.0, 5.0]))
    assert jac == pytest.approx(m, abs=1e-8)


def test_sweep_of_constant_family():
    report = homotopy_sweep(lambda t: CallableMap(3, lambda x: (1.0 + t) * x), [0.0, 0.5, 1.0],
                            Box.symmetric(np.ones(3)))
    assert report.admissible
    assert report.margins == pytest.approx([1.0, 1.5, 2.0])


def test_sweep_rejects_bad_parameter_grid():
    with pytest.raises(ConfigError):
        homotopy_sweep(lambda t: CallableMap(1, lambda x: x), [], Box.symmetric([1.0]))
    with pytest.raises(ConfigError):
        homotopy_sweep(lambda t: CallableMap(1, lambda x: x), [0.0, 1.5], Box.symmetric([1.0]))


# === Homotopy maps ===

def test_compact_map_limits(coarse):
    op, params, env, _, _ = coarse
    with pytest.raises(ConfigError):
        CompactMap('X', op, params, env, 0.0)
    with pytest.raises(ConfigError):
        CompactMap('H', op, params, env, 1.5)

    big = assemble_neumann_operator(build_grid(1, [1.0], [9]))
    ones = Field.constant(big.grid, 1.0)
    big_env = TruncationEnv(epsilon=0.5, ubar=ones, vbar=ones, phi1=ones)
    with pytest.raises(DegreeError):
        CompactMap('H', big, params, big_env, 0.0)


def test_map_values_at_start_of_homotopy(coarse):
    op, params, env, eigen, _ = coarse
    grid = op.grid
    zero = Field.constant(grid, 0.0)

    h0 = CompactMap('H', op, params, env, 0.0)
    ru, rv = map_eval(h0, zero, zero)
    assert ru.values == pytest.approx(-1.0, abs=1e-12)
    assert rv.values == pytest.approx(-1.0, abs=1e-12)

    n0 = CompactMap('N', op, params, env, 0.0, eigen.lambda1)
    ru, rv = map_eval(n0, eigen.phi1, eigen.phi1)
    assert ru.sup_norm() <= 1e-12
    assert rv.sup_norm() <= 1e-12
    assert n0.at(1.0).t == 1.0


def test_decoupled_homotopy_start_has_degree_zero(coarse):
    op, params, env, _, R = coarse
    h0 = CompactMap('H', op, params, env, 0.0)
    estimate = estimate_degree(h0, Box.symmetric(np.full(h0.dimension, R)), n_starts=16)
    assert estimate.value == 0
    assert estimate.zeros == []
    assert estimate.boundary_margin > 1e-10


def test_perturbed_homotopy_start_is_not_admissible(coarse):
    op, params, env, eigen, R = coarse
    n0 = CompactMap('N', op, params, env, 0.0, eigen.lambda1)
    inner = np.concatenate([env.ulow.values, env.vlow.values])
    ring = BoxDifference(Box.symmetric(np.full(n0.dimension, R)), Box.symmetric(inner))
    with pytest.raises(AdmissibilityError):
        estimate_degree(n0, ring, n_starts=8)

    sweep = homotopy_sweep(n0.at, [0.0, 1.0], ring, samples=32)
    assert not sweep.admissible
    assert sweep.margins[0] <= 1e-10


# === No-solution witness ===

@pytest.mark.parametrize("dim, extents, nodes", [
    (1, [1.0], [4]),
    (1, [1.0], [101]),
    (1, [3.0], [17]),
    (2, [1.0, 2.0], [21, 21]),
])
def test_no_solution_witness(dim, extents, nodes):
    op = assemble_neumann_operator(build_grid(dim, extents, nodes))
    witness = check_no_solution_t0(op)
    assert witness.holds
    assert witness.measure == pytest.approx(float(np.prod(extents)))
    assert witness.identity_defect <= 1e-12
    assert witness.to_dict()['no_solution_t0'] is True


def test_witness_uses_weighted_sum():
    op = assemble_neumann_operator(build_grid(1, [2.0], [4]))
    data = check_no_solution_t0(op).to_dict()
    assert data['weighted_contradiction'] == pytest.approx(2.0)
    assert data['node_count'] == 4
    # row sums are 1, column sums are not
    x = op.grid.coordinates[:, 0] ** 2
    assert np.sum(op.apply(x)) != pytest.approx(np.sum(x))
    assert np.dot(op.weights, op.apply(x)) == pytest.approx(np.dot(op.weights, x), abs=1e-12)
