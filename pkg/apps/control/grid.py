"""
Uniform rectangular grids, grid functions on Omega and Gamma, and the
Robin-Laplacian stiffness operator.

Nodes are numbered row-major (k = j * nx + i, x1 varies fastest). Boundary
nodes are numbered counterclockwise along the perimeter starting at the
lower-left corner; every corner is counted once.
"""
from dataclasses import dataclass, field
from functools import cached_property
import logging

import numpy as np
import scipy.sparse as sp
from django.core.exceptions import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid:
    """Uniform node grid on the rectangle [x0, x0 + lx] x [y0, y0 + ly]."""
    nx: int
    ny: int
    x0: float = 0.0
    y0: float = 0.0
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        self.clean()

    def clean(self):
        """Validate node counts and side lengths."""
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValidationError("Node counts must be integers.")
        if self.nx < 3 or self.ny < 3:
            raise ValidationError(f"Grid needs at least 3 nodes per axis, got nx={self.nx}, ny={self.ny}.")
        if not (self.lx > 0 and self.ly > 0):
            raise ValidationError(f"Side lengths must be positive, got lx={self.lx}, ly={self.ly}.")

    def __str__(self):
        return f"{self.nx}x{self.ny} grid on [{self.x0}, {self.x0 + self.lx}]x[{self.y0}, {self.y0 + self.ly}]"

    @property
    def hx(self):
        return self.lx / (self.nx - 1)

    @property
    def hy(self):
        return self.ly / (self.ny - 1)

    @property
    def h(self):
        """Largest mesh spacing."""
        return max(self.hx, self.hy)

    @property
    def n_nodes(self):
        return self.nx * self.ny

    @property
    def n_boundary(self):
        return 2 * self.nx + 2 * self.ny - 4

    @property
    def n_interior(self):
        return (self.nx - 2) * (self.ny - 2)

    @property
    def area(self):
        return self.lx * self.ly

    @property
    def perimeter(self):
        return 2.0 * (self.lx + self.ly)

    def node(self, i, j):
        """Row-major index of node (i, j)."""
        return j * self.nx + i

    @cached_property
    def coordinates(self):
        """Tuple (x1, x2) of node coordinate arrays in row-major order."""
        xs = self.x0 + self.hx * np.arange(self.nx)
        ys = self.y0 + self.hy * np.arange(self.ny)
        x1, x2 = np.meshgrid(xs, ys)
        return x1.ravel(), x2.ravel()

    @cached_property
    def boundary_index(self):
        """Node indices of the perimeter, counterclockwise from (x0, y0)."""
        nx, ny = self.nx, self.ny
        bottom = [self.node(i, 0) for i in range(nx)]
        right = [self.node(nx - 1, j) for j in range(1, ny)]
        top = [self.node(i, ny - 1) for i in range(nx - 2, -1, -1)]
        left = [self.node(0, j) for j in range(ny - 2, 0, -1)]
        index = np.array(bottom + right + top + left, dtype=np.intp)
        index.setflags(write=False)
        return index

    @cached_property
    def interior_mask(self):
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_index] = False
        mask.setflags(write=False)
        return mask

    @cached_property
    def _edge_factors(self):
        cx = np.ones(self.nx)
        cx[[0, -1]] = 0.5
        cy = np.ones(self.ny)
        cy[[0, -1]] = 0.5
        return cx, cy

    @cached_property
    def omega_weights(self):
        """Lumped trapezoidal weights: hx*hy, halved on edges, quartered at corners."""
        cx, cy = self._edge_factors
        weights = self.hx * self.hy * np.outer(cy, cx).ravel()
        weights.setflags(write=False)
        return weights

    @cached_property
    def gamma_weights(self):
        """
        Arc-length weights of the perimeter nodes.

        Edge nodes carry one full cell (hx or hy). A corner ends two edges
        and takes the halved trapezoid weight from each, hx / 2 + hy / 2,
        so the weights sum to the perimeter 2 (lx + ly).
        """
        nx, ny = self.nx, self.ny
        weights = np.concatenate([
            np.full(nx, self.hx),
            np.full(ny - 1, self.hy),
            np.full(nx - 1, self.hx),
            np.full(ny - 2, self.hy),
        ])
        corners = [0, nx - 1, nx + ny - 2, 2 * nx + ny - 3]
        weights[corners] = 0.5 * (self.hx + self.hy)
        weights.setflags(write=False)
        return weights

    @cached_property
    def outward_normals(self):
        """Outward unit normals per perimeter node; corners average both sides."""
        normals = np.zeros((self.n_boundary, 2))
        x1, x2 = self.coordinates
        bx, by = x1[self.boundary_index], x2[self.boundary_index]
        tol = 1e-12 * max(self.lx, self.ly)
        normals[np.abs(bx - self.x0) < tol, 0] -= 1.0
        normals[np.abs(bx - (self.x0 + self.lx)) < tol, 0] += 1.0
        normals[np.abs(by - self.y0) < tol, 1] -= 1.0
        normals[np.abs(by - (self.y0 + self.ly)) < tol, 1] += 1.0
        corner = (normals != 0).sum(axis=1) == 2
        normals[corner] *= 0.5
        normals.setflags(write=False)
        return normals


def build_grid(nx, ny, rect=(0.0, 0.0, 1.0, 1.0)):
    """Build a grid from node counts and a rectangle (x0, y0, lx, ly)."""
    x0, y0, lx, ly = (float(r) for r in rect)
    grid = Grid(int(nx), int(ny), x0, y0, lx, ly)
    logger.debug(f"Built {grid}: {grid.n_nodes} nodes, {grid.n_boundary} on the boundary")
    return grid


class GridFunction:
    """Real values attached to a set of grid nodes; read-only after construction."""

    def __init__(self, grid, values):
        values = np.array(values, dtype=float).ravel()
        if values.size == 1:
            values = np.full(self.expected_size(grid), values[0])
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.clean()

    @classmethod
    def expected_size(cls, grid):
        raise NotImplementedError

    def clean(self):
        size = self.expected_size(self.grid)
        if self.values.size != size:
            raise ValidationError(
                f"{type(self).__name__} on {self.grid} needs {size} values, got {self.values.size}."
            )
        if not np.all(np.isfinite(self.values)):
            raise ValidationError(f"{type(self).__name__} contains non-finite entries.")

    @classmethod
    def constant(cls, grid, value):
        return cls(grid, np.full(cls.expected_size(grid), float(value)))

    @classmethod
    def zeros(cls, grid):
        return cls.constant(grid, 0.0)

    def __str__(self):
        return f"{type(self).__name__}({self.grid}, min={self.min():.6g}, max={self.max():.6g})"

    def __repr__(self):
        return str(self)

    def __len__(self):
        return self.values.size

    def _other(self, other):
        if isinstance(other, GridFunction):
            if type(other) is not type(self) or other.grid != self.grid:
                raise ValueError(f"Cannot combine {self} with {other}: grid mismatch.")
            return other.values
        return other

    def __add__(self, other):
        return type(self)(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return type(self)(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return type(self)(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return type(self)(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return type(self)(self.grid, self.values / self._other(other))

    def __neg__(self):
        return type(self)(self.grid, -self.values)

    def min(self):
        return float(self.values.min())

    def max(self):
        return float(self.values.max())

    def max_abs(self):
        return float(np.abs(self.values).max())

    @property
    def spread(self):
        """max - min of the values."""
        return self.max() - self.min()

    def map(self, fn):
        """Apply a vectorized function to the values."""
        return type(self)(self.grid, fn(self.values))


class Field(GridFunction):
    """Function on all nodes of the closed domain."""

    @classmethod
    def expected_size(cls, grid):
        return grid.n_nodes

    @classmethod
    def from_function(cls, grid, fn):
        x1, x2 = grid.coordinates
        return cls(grid, np.broadcast_to(fn(x1, x2), x1.shape))

    def as_array(self):
        """Values as an (ny, nx) array."""
        return self.values.reshape(self.grid.ny, self.grid.nx)


class BoundaryField(GridFunction):
    """Function on the perimeter nodes, in perimeter order."""

    @classmethod
    def expected_size(cls, grid):
        return grid.n_boundary

    @classmethod
    def from_function(cls, grid, fn):
        x1, x2 = grid.coordinates
        bx, by = x1[grid.boundary_index], x2[grid.boundary_index]
        return cls(grid, np.broadcast_to(fn(bx, by), bx.shape))


def _check_grid(*functions):
    grid = functions[0].grid
    for f in functions[1:]:
        if f.grid != grid:
            raise ValueError(f"Grid mismatch: {grid} vs {f.grid}.")
    return grid


def inner_omega(f, g):
    """Trapezoidal L2(Omega) inner product."""
    grid = _check_grid(f, g)
    return float(np.dot(grid.omega_weights * f.values, g.values))


def inner_gamma(f, g):
    """Trapezoidal L2(Gamma) inner product."""
    grid = _check_grid(f, g)
    return float(np.dot(grid.gamma_weights * f.values, g.values))


def norm_omega(f):
    return inner_omega(f, f) ** 0.5


def norm_gamma(g):
    return inner_gamma(g, g) ** 0.5


def norm_h1(f):
    """Discrete H1 norm with forward-difference gradients."""
    grid = f.grid
    z = f.as_array()
    dx = np.diff(z, axis=1) / grid.hx
    dy = np.diff(z, axis=0) / grid.hy
    gradient = grid.hx * grid.hy * (np.sum(dx ** 2) + np.sum(dy ** 2))
    return (inner_omega(f, f) + gradient) ** 0.5


def trace(f):
    """Restriction of a Field to the perimeter."""
    return BoundaryField(f.grid, f.values[f.grid.boundary_index])


def extend_by_zero(g):
    """Field equal to g on the perimeter and zero inside."""
    values = np.zeros(g.grid.n_nodes)
    values[g.grid.boundary_index] = g.values
    return Field(g.grid, values)


def omega_load(f):
    """Nodal load vector M_Omega f."""
    return f.grid.omega_weights * f.values


def gamma_load(g):
    """Nodal load vector M_Gamma g (zero at interior nodes)."""
    values = np.zeros(g.grid.n_nodes)
    values[g.grid.boundary_index] = g.grid.gamma_weights * g.values
    return values


def level_band(y, t, delta):
    """Boolean mask of nodes with |y - t| <= delta."""
    if delta < 0:
        raise ValueError(f"Band width must be nonnegative, got {delta}.")
    return np.abs(y.values - t) <= delta


def level_set_measure(y, t, delta):
    """Quadrature measure of the band {|y - t| <= delta}."""
    return float(y.grid.omega_weights[level_band(y, t, delta)].sum())


def band_measure(grid, mask):
    return float(grid.omega_weights[mask].sum())


@dataclass(eq=False)
class RobinOperator:
    """Symmetric stiffness matrix of -Laplace with the Robin term on Gamma."""
    grid: Grid
    b: BoundaryField
    matrix: sp.csr_matrix
    stencil: str = 'five-point/ghost-node'
    meta: dict = field(default_factory=dict)

    def apply(self, y):
        """Nodal load vector A y."""
        return self.matrix @ y.values

    def with_reaction(self, a):
        """A + M_Omega diag(a) for a nodal coefficient array a."""
        return (self.matrix + sp.diags(self.grid.omega_weights * np.asarray(a))).tocsr()

    @cached_property
    def diagonal(self):
        return self.matrix.diagonal()


def _neumann_difference(n):
    """1D matrix B^T B for the (n-1) x n forward-difference matrix B."""
    main = np.full(n, 2.0)
    main[[0, -1]] = 1.0
    off = -np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1])


def assemble_robin(grid, b):
    """Assemble the ghost-node Robin-Laplacian, symmetrized by quadrature weights."""
    if b.grid != grid:
        raise ValueError(f"Robin coefficient lives on {b.grid}, operator grid is {grid}.")
    if np.any(b.values <= 0):
        raise ValidationError(
            f"Robin coefficient must satisfy b >= b0 > 0 on Gamma; min b = {b.min():.6g}."
        )
    cx, cy = grid._edge_factors
    stiffness_x = sp.kron(sp.diags(grid.hy * cy), _neumann_difference(grid.nx) / grid.hx)
    stiffness_y = sp.kron(_neumann_difference(grid.ny) / grid.hy, sp.diags(grid.hx * cx))
    index = grid.boundary_index
    robin = sp.coo_matrix(
        (grid.gamma_weights * b.values, (index, index)),
        shape=(grid.n_nodes, grid.n_nodes),
    )
    matrix = (stiffness_x + stiffness_y + robin).tocsr()
    logger.debug(f"Assembled Robin operator on {grid}: nnz={matrix.nnz}, min b={b.min():.3g}")
    return RobinOperator(grid=grid, b=b, matrix=matrix, meta={'b_min': b.min(), 'b_max': b.max()})


def interior_laplacian(op, y):
    """Discrete Laplacian of y at interior nodes (zero at boundary nodes)."""
    values = -op.apply(y) / op.grid.omega_weights
    values[~op.grid.interior_mask] = 0.0
    return Field(op.grid, values)
