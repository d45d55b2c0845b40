"""Shared fixtures: grids, operators and the constant-coefficient instance"""

import pytest

from gmsolver.services.grid import assemble_neumann_operator, build_grid
from gmsolver.services.linear import principal_eigenpair
from gmsolver.services.model import ProblemParams
from gmsolver.services.subsup import calibrate_constants, certify_constants


@pytest.fixture
def grid_1d():
    return build_grid(1, [1.0], [101])


@pytest.fixture
def op_1d(grid_1d):
    return assemble_neumann_operator(grid_1d)


@pytest.fixture
def small_op():
    return assemble_neumann_operator(build_grid(1, [1.0], [21]))


@pytest.fixture
def op_2d():
    return assemble_neumann_operator(build_grid(2, [1.0, 2.0], [21, 21]))


@pytest.fixture
def nodal_op():
    # 20 nodes: no node on the zero of cos(pi x)
    return assemble_neumann_operator(build_grid(1, [1.0], [20]))


@pytest.fixture
def constant_params():
    """Solution (u, v) = (4, 2)"""
    return ProblemParams(alpha1=0.5, alpha2=0.5, beta1=0.0, beta2=0.0, rho=2.0)


@pytest.fixture
def nodal_params():
    return ProblemParams(alpha1=0.8, alpha2=0.6, beta1=0.0, beta2=0.2, rho=1.0)


@pytest.fixture
def calibrated():
    """calibrated(op, params) or calibrated(op, params, C=..., c0=...) -> (eigen, calibration)"""

    def build(op, params, C=None, c0=None):
        eigen = principal_eigenpair(op)
        if C is not None:
            return eigen, certify_constants(op, params, eigen, C, c0 or 2.0)
        return eigen, calibrate_constants(op, params, eigen)

    return build
