"""
GM Solver - Grid Service
Discrete Neumann domains (interval / rectangle), nodal fields and the
operator A = -Laplacian_h + I with mirrored (zero-flux) boundary rows.

Node ordering is C-order over the per-axis index tuple, so in 2D node
(i, j) has flat index i * ny + j.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from gmsolver.errors import GridError

logger = logging.getLogger(__name__)

# =============================================================================
# CONSTANTS
# =============================================================================

MAX_DIM = 2
MIN_NODES_PER_AXIS = 3
AXIS_NAMES = ('x', 'y')
CSV_FORMAT = '%.17g'


# =============================================================================
# GRID
# =============================================================================

@dataclass(frozen=True)
class Grid:
    """Uniform node-centred grid on a box [0, L1] (x [0, L2])"""

    dim: int
    extents: Tuple[float, ...]
    nodes: Tuple[int, ...]
    spacing: Tuple[float, ...]

    @property
    def node_count(self) -> int:
        return int(np.prod(self.nodes))

    @property
    def cell_measure(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def measure(self) -> float:
        """|Omega|"""
        return float(np.prod(self.extents))

    def axis_coordinates(self, axis: int) -> np.ndarray:
        return np.linspace(0.0, self.extents[axis], self.nodes[axis])

    @cached_property
    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape (node_count, dim)"""
        axes = [self.axis_coordinates(k) for k in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing='ij')
        return np.column_stack([m.ravel() for m in mesh])

    @cached_property
    def weights(self) -> np.ndarray:
        """
        Trapezoid quadrature weights per node.

        Interior nodes carry the full cell measure, boundary nodes half of
        it per boundary axis. Sum of weights equals |Omega|.
        """
        per_axis = []
        for k in range(self.dim):
            w = np.full(self.nodes[k], self.spacing[k])
            w[0] *= 0.5
            w[-1] *= 0.5
            per_axis.append(w)
        weights = per_axis[0]
        for w in per_axis[1:]:
            weights = np.kron(weights, w)
        return weights

    def describe(self) -> dict:
        return {
            'dim': self.dim,
            'extents': list(self.extents),
            'nodes': list(self.nodes),
            'spacing': list(self.spacing),
            'node_count': self.node_count,
        }


def build_grid(dim: int, extents: Sequence[float], nodes_per_axis: Sequence[int]) -> Grid:
    """
    Build a uniform grid.

    Args:
        dim: 1 (interval) or 2 (rectangle)
        extents: box side lengths, one per axis
        nodes_per_axis: node counts, one per axis (>= 3)

    Returns:
        Grid with spacing extent / (nodes - 1) per axis
    """
    if dim not in (1, MAX_DIM):
        raise GridError(f"Unsupported grid dimension: {dim} (expected 1 or 2)")

    extents = tuple(float(e) for e in extents)
    nodes = tuple(int(n) for n in nodes_per_axis)

    if len(extents) != dim or len(nodes) != dim:
        raise GridError(f"Expected {dim} extents and node counts, got {len(extents)} and {len(nodes)}")
    for k, (ext, n) in enumerate(zip(extents, nodes)):
        if not np.isfinite(ext) or ext <= 0:
            raise GridError(f"Extent along axis {AXIS_NAMES[k]} must be positive: {ext}")
        if n < MIN_NODES_PER_AXIS:
            raise GridError(f"Axis {AXIS_NAMES[k]} needs at least {MIN_NODES_PER_AXIS} nodes, got {n}")

    spacing = tuple(ext / (n - 1) for ext, n in zip(extents, nodes))
    return Grid(dim=dim, extents=extents, nodes=nodes, spacing=spacing)


# =============================================================================
# FIELD
# =============================================================================

Scalar = Union[int, float]


@dataclass(frozen=True, eq=False)
class Field:
    """One finite real value per grid node (read-only)"""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size != self.grid.node_count:
            raise GridError(
                f"Field has {values.size} values but grid has {self.grid.node_count} nodes"
            )
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise GridError(f"Field value at node {bad} is not finite")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    # === Constructors ===

    @classmethod
    def constant(cls, grid: Grid, value: float) -> 'Field':
        return cls(grid, np.full(grid.node_count, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[..., np.ndarray]) -> 'Field':
        """Evaluate fn(x) or fn(x, y) at the nodes"""
        coords = grid.coordinates
        values = fn(*[coords[:, k] for k in range(grid.dim)])
        return cls(grid, np.broadcast_to(np.asarray(values, dtype=float), (grid.node_count,)))

    def with_values(self, values: np.ndarray) -> 'Field':
        return Field(self.grid, values)

    # === Reductions ===

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def min(self) -> float:
        return float(np.min(self.values))

    def max(self) -> float:
        return float(np.max(self.values))

    def argmin(self) -> int:
        return int(np.argmin(self.values))

    # === Arithmetic ===

    def _other(self, other: Union['Field', Scalar]) -> Union[np.ndarray, float]:
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise GridError("Fields live on different grids")
            return other.values
        return float(other)

    def __neg__(self) -> 'Field':
        return self.with_values(-self.values)

    def __add__(self, other) -> 'Field':
        return self.with_values(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other) -> 'Field':
        return self.with_values(self.values - self._other(other))

    def __rsub__(self, other) -> 'Field':
        return self.with_values(self._other(other) - self.values)

    def __mul__(self, other) -> 'Field':
        return self.with_values(self.values * self._other(other))

    __rmul__ = __mul__

    def __len__(self) -> int:
        return self.values.size

    # === CSV ===

    def to_csv(self, path: str, name: str = 'value') -> None:
        """One row per node: coordinates then value"""
        header = ','.join(list(AXIS_NAMES[:self.grid.dim]) + [name])
        table = np.column_stack([self.grid.coordinates, self.values])
        np.savetxt(path, table, delimiter=',', header=header, comments='', fmt=CSV_FORMAT)

    @classmethod
    def read_csv(cls, path: str, grid: Grid) -> 'Field':
        table = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
        if table.shape[1] != grid.dim + 1:
            raise GridError(f"CSV {path} has {table.shape[1]} columns, expected {grid.dim + 1}")
        if not np.allclose(table[:, :grid.dim], grid.coordinates, rtol=0.0, atol=1e-12):
            raise GridError(f"CSV {path} coordinates do not match the grid")
        return cls(grid, table[:, -1])


def as_values(x: Union[Field, np.ndarray]) -> np.ndarray:
    return x.values if isinstance(x, Field) else np.asarray(x, dtype=float)


def integrate(field: Field) -> float:
    """Trapezoid-rule integral of a nodal field over the grid box"""
    return float(np.dot(field.grid.weights, field.values))


# =============================================================================
# NEUMANN OPERATOR
# =============================================================================

def _mirror_laplacian_1d(n: int, h: float) -> sp.csr_matrix:
    """
    -d2/dx2 with mirrored ghost nodes: interior rows (-1, 2, -1) / h^2,
    boundary rows (2, -2) / h^2. Every row sums to exactly 0.
    """
    a = 1.0 / (h * h)
    main = np.full(n, 2.0 * a)
    upper = np.full(n - 1, -a)
    lower = np.full(n - 1, -a)
    upper[0] = -2.0 * a
    lower[-1] = -2.0 * a
    return sp.diags([lower, main, upper], [-1, 0, 1], format='csr')


@dataclass(frozen=True, eq=False)
class NeumannOperator:
    """
    A = -Laplacian_h + I (+ diag(potential)).

    A itself is not a symmetric matrix (boundary rows are mirrored), but
    W A is, with W the trapezoid weights. CG works on that form.
    """

    grid: Grid
    axis_laplacians: Tuple[sp.csr_matrix, ...]
    potential: Optional[np.ndarray] = None

    def __post_init__(self):
        potential = self.potential
        if potential is None:
            potential = np.zeros(self.grid.node_count)
        potential = np.array(potential, dtype=float).ravel()
        potential.setflags(write=False)
        object.__setattr__(self, 'potential', potential)

    @property
    def size(self) -> int:
        return self.grid.node_count

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weights

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        total = sp.identity(self.size, format='csr') + sp.diags(self.potential, format='csr')
        for lap in self.axis_laplacians:
            total = total + lap
        return total.tocsr()

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Half-weight symmetrized form S = W A (exactly symmetric)"""
        s = sp.diags(self.weights) @ self.matrix
        return (0.5 * (s + s.T)).tocsr()

    @cached_property
    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def apply(self, x: Union[Field, np.ndarray]) -> Union[Field, np.ndarray]:
        """
        A x, summed axis by axis so that constants are reproduced
        bit-for-bit (each axis Laplacian kills constants exactly).
        """
        values = as_values(x)
        result = values + self.potential * values
        for lap in self.axis_laplacians:
            result = result + lap @ values
        if isinstance(x, Field):
            return x.with_values(result)
        return result

    def with_potential(self, potential: Union[Field, np.ndarray]) -> 'NeumannOperator':
        """A + diag(q)"""
        return NeumannOperator(self.grid, self.axis_laplacians, self.potential + as_values(potential))

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()


def assemble_neumann_operator(grid: Grid) -> NeumannOperator:
    """Assemble A = -Laplacian_h + I with zero-flux boundary rows"""
    per_axis = [_mirror_laplacian_1d(n, h) for n, h in zip(grid.nodes, grid.spacing)]

    if grid.dim == 1:
        laplacians = (per_axis[0],)
    else:
        nx, ny = grid.nodes
        laplacians = (
            sp.kron(per_axis[0], sp.identity(ny), format='csr'),
            sp.kron(sp.identity(nx), per_axis[1], format='csr'),
        )

    logger.debug(f"Assembled Neumann operator on {grid.node_count} nodes (dim={grid.dim})")
    return NeumannOperator(grid, laplacians)


def weighted_mass_identity(op: NeumannOperator, x: Union[Field, np.ndarray]) -> float:
    """
    Defect of sum_i w_i (A x)_i = sum_i w_i x_i (testing with the constant 1).

    Holds for the unperturbed operator on any field; returns the absolute
    defect so callers can compare it to machine precision.
    """
    values = as_values(x)
    w = op.weights
    return float(abs(np.dot(w, as_values(op.apply(values))) - np.dot(w, values)))


def relative_symmetry_defect(op: NeumannOperator) -> float:
    """max |S - S^T| / max |S| for S = W A before symmetrization"""
    s = (sp.diags(op.weights) @ op.matrix).tocsr()
    diff = abs(s - s.T)
    scale = abs(s).max()
    return float(diff.max() / scale) if diff.nnz else 0.0
