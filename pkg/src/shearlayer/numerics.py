"""Grids, nodal fields, finite-difference and quadrature operators, sparse solves.

All fields are stored node-wise as arrays of shape ``(nx + 1, n2 + 1)`` where
the first index runs along ``x`` and the second along the transverse axis
(``y`` on the physical grid, ``Y`` on a boundary-layer grid).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import trapezoid


class GridError(ValueError):
    """Raised for axis or region requests that do not fit the grid."""


class SolverFailure(RuntimeError):
    """Raised when a linear solve cannot meet its residual contract."""

    def __init__(self, message, residual=math.inf):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class PhysicalGrid:
    """Uniform node grid on (0, L) x (0, 2), walls included."""

    L: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise GridError(f"need nx, ny >= 8, got {self.nx}, {self.ny}")
        if not self.L > 0:
            raise GridError("channel length must be positive")

    axes = ("x", "y")

    @property
    def hx(self):
        return self.L / self.nx

    @property
    def hy(self):
        return 2.0 / self.ny

    @property
    def x(self):
        return np.linspace(0.0, self.L, self.nx + 1)

    @property
    def y(self):
        return np.linspace(0.0, 2.0, self.ny + 1)

    @property
    def shape(self):
        return (self.nx + 1, self.ny + 1)

    def spacing(self, axis):
        if axis == "x":
            return self.hx
        if axis == "y":
            return self.hy
        raise GridError(f"axis {axis!r} not on a physical grid")

    def coords(self, axis):
        return self.x if axis == "x" else self.y

    def mesh(self):
        return np.meshgrid(self.x, self.y, indexing="ij")

    def header(self):
        return f"# grid: {self.nx},{self.ny},{self.L!r}"


@dataclass(frozen=True)
class BoundaryLayerGrid:
    """Node grid in (x, Y) for a wall layer; Y is the stretched wall distance.

    ``orientation`` is ``"bottom"`` (y = sqrt(eps) Y) or ``"top"``
    (y = 2 - sqrt(eps) Y).
    """

    L: float
    nx: int
    Ymax: float
    nY: int
    orientation: str = "bottom"

    def __post_init__(self):
        if self.orientation not in ("bottom", "top"):
            raise GridError(f"unknown orientation {self.orientation!r}")
        if self.Ymax < 20:
            raise GridError(f"Ymax must be >= 20, got {self.Ymax}")
        if self.nx < 2 or self.nY < 2:
            raise GridError("boundary-layer grid needs at least 3 nodes per axis")

    axes = ("x", "Y")

    @property
    def hx(self):
        return self.L / self.nx

    @property
    def hY(self):
        return self.Ymax / self.nY

    @property
    def x(self):
        return np.linspace(0.0, self.L, self.nx + 1)

    @property
    def Y(self):
        return np.linspace(0.0, self.Ymax, self.nY + 1)

    @property
    def shape(self):
        return (self.nx + 1, self.nY + 1)

    def spacing(self, axis):
        if axis == "x":
            return self.hx
        if axis == "Y":
            return self.hY
        raise GridError(f"axis {axis!r} not on a boundary-layer grid")

    def coords(self, axis):
        return self.x if axis == "x" else self.Y

    def header(self):
        return f"# grid: {self.nx},{self.nY},{self.L!r}"

    @classmethod
    def aligned(cls, grid: PhysicalGrid, eps, orientation, min_height=20.0, extra=0, min_nY=0):
        """Layer grid whose Y nodes coincide with physical y nodes.

        The spacing is hy / sqrt(eps), and the height covers both the whole
        channel and at least ``min_height``, with no fewer than ``min_nY``
        cells. ``extra`` appends that many x cells past x = L with the
        physical spacing.
        """
        hY = grid.hy / math.sqrt(eps)
        nY = max(grid.ny, math.ceil(min_height / hY - 1e-9), int(min_nY))
        return cls(grid.L + extra * grid.hx, grid.nx + extra, nY * hY, nY, orientation)


@dataclass
class Field2D:
    """Nodal scalar field on a physical or boundary-layer grid."""

    grid: PhysicalGrid | BoundaryLayerGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise GridError(f"values of shape {self.values.shape} do not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("field contains non-finite values")

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid, fn):
        X, Z = np.meshgrid(grid.coords(grid.axes[0]), grid.coords(grid.axes[1]), indexing="ij")
        return cls(grid, np.broadcast_to(fn(X, Z), grid.shape).copy())

    def _other(self, other):
        if isinstance(other, Field2D):
            if other.grid != self.grid:
                raise GridError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return Field2D(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field2D(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return Field2D(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return Field2D(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field2D(self.grid, self.values / self._other(other))

    def __neg__(self):
        return Field2D(self.grid, -self.values)

    def max_abs(self):
        return float(np.max(np.abs(self.values)))

    def to_csv(self, path, extra_header=()):
        write_field_csv(path, self, extra_header)


def d1(a, h, axis):
    """First derivative: central inside, one-sided 3-point at both ends."""
    a = np.moveaxis(np.asarray(a, dtype=float), axis, 0)
    out = np.empty_like(a)
    out[1:-1] = (a[2:] - a[:-2]) / (2 * h)
    if a.shape[0] >= 3:
        out[0] = (-3 * a[0] + 4 * a[1] - a[2]) / (2 * h)
        out[-1] = (3 * a[-1] - 4 * a[-2] + a[-3]) / (2 * h)
    else:
        out[0] = out[-1] = (a[-1] - a[0]) / h
    return np.moveaxis(out, 0, axis)


def d2(a, h, axis):
    """Second derivative: central inside, one-sided 4-point at both ends."""
    a = np.moveaxis(np.asarray(a, dtype=float), axis, 0)
    if a.shape[0] < 3:
        raise GridError("second derivative needs at least 3 nodes")
    out = np.empty_like(a)
    out[1:-1] = (a[2:] - 2 * a[1:-1] + a[:-2]) / h**2
    if a.shape[0] >= 4:
        out[0] = (2 * a[0] - 5 * a[1] + 4 * a[2] - a[3]) / h**2
        out[-1] = (2 * a[-1] - 5 * a[-2] + 4 * a[-3] - a[-4]) / h**2
    else:
        out[0] = out[1]
        out[-1] = out[-2]
    return np.moveaxis(out, 0, axis)


def diff(f: Field2D, axis: str, order: int = 1) -> Field2D:
    """Differentiate a field along ``axis`` ("x", "y" or "Y")."""
    if axis not in f.grid.axes:
        raise GridError(f"axis {axis!r} not present on grid with axes {f.grid.axes}")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    k = f.grid.axes.index(axis)
    if f.values.shape[k] < 3:
        raise GridError("need at least 3 nodes along the axis")
    h = f.grid.spacing(axis)
    op = d1 if order == 1 else d2
    return Field2D(f.grid, op(f.values, h, k))


def laplacian(a, hx, hy):
    return d2(a, hx, 0) + d2(a, hy, 1)


def _extrapolation_weights(k, npts):
    """Lagrange weights at node -k from nodes 0..npts-1 (unit spacing)."""
    nodes = np.arange(npts, dtype=float)
    w = np.ones(npts)
    for m in range(npts):
        for q in range(npts):
            if q != m:
                w[m] *= (-k - nodes[q]) / (nodes[m] - nodes[q])
    return w


def extend_x(a, left, right, npts=5):
    """Pad an array along axis 0 by polynomial extrapolation.

    Ghost rows come from the degree ``npts - 1`` interpolant of the nearest
    ``npts`` rows, so nested central differences across the original ends
    stay consistent to high order.
    """
    a = np.asarray(a, dtype=float)
    parts = []
    if left:
        lo = a[:npts]
        parts.append(np.stack([np.tensordot(_extrapolation_weights(k, npts), lo, axes=1)
                               for k in range(left, 0, -1)]))
    parts.append(a)
    if right:
        hi = a[::-1][:npts]
        parts.append(np.stack([np.tensordot(_extrapolation_weights(k, npts), hi, axes=1)
                               for k in range(1, right + 1)]))
    return np.concatenate(parts, axis=0)


def _node_index(coords, c, what):
    k = int(round((c - coords[0]) / (coords[1] - coords[0])))
    if k < 0 or k >= coords.size or abs(coords[k] - c) > 1e-9 * max(1.0, abs(c)):
        raise GridError(f"{what}={c} is not a grid line")
    return k


def integrate(f: Field2D, region="full") -> float:
    """Composite trapezoid integral over the whole grid or along a grid line.

    ``region`` is ``"full"`` or a pair ``(axis, c)``: ``("x", c)`` integrates
    over the transverse direction on the line x = c, ``("y", c)`` over x on the
    line y = c, and ``("Y", k)`` over the half-line Y >= k at every x node,
    returning the array of line integrals.
    """
    g = f.grid
    a = f.values
    ax0, ax1 = g.axes
    if region == "full":
        inner = trapezoid(a, dx=g.spacing(ax1), axis=1)
        return float(trapezoid(inner, dx=g.spacing(ax0)))
    axis, c = region
    if axis == "x":
        i = _node_index(g.x, c, "x")
        return float(trapezoid(a[i], dx=g.spacing(ax1)))
    if axis == "y" and ax1 == "y":
        j = _node_index(g.y, c, "y")
        return float(trapezoid(a[:, j], dx=g.hx))
    if axis == "Y" and ax1 == "Y":
        k = _node_index(g.Y, c, "Y")
        return trapezoid(a[:, k:], dx=g.hY, axis=1)
    raise GridError(f"region {region!r} not available on this grid")


@dataclass
class LinearSystem:
    matrix: sp.spmatrix
    rhs: np.ndarray
    tol: float = 1e-10

    def __post_init__(self):
        self.matrix = sp.csr_matrix(self.matrix)
        self.rhs = np.asarray(self.rhs, dtype=float)
        n, m = self.matrix.shape
        if n != m or n != self.rhs.size:
            raise ValueError(f"matrix {self.matrix.shape} incompatible with rhs of length {self.rhs.size}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


def solve_linear(system: LinearSystem, refine=2) -> np.ndarray:
    """Sparse LU solve with a few steps of iterative refinement.

    Enforces ``||A x - b||_2 <= tol (1 + ||b||_2)``.
    """
    A = system.matrix.tocsc()
    b = system.rhs
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SolverFailure(f"factorization failed: {exc}") from exc
    x = lu.solve(b)
    bound = system.tol * (1.0 + np.linalg.norm(b))
    res = np.linalg.norm(A @ x - b) if np.all(np.isfinite(x)) else math.inf
    for _ in range(refine):
        if res <= bound or not math.isfinite(res):
            break
        x = x + lu.solve(b - A @ x)
        res = np.linalg.norm(A @ x - b)
    if not res <= bound:
        raise SolverFailure("linear solve missed its residual tolerance", res)
    return x


def write_field_csv(path, f: Field2D, extra_header=()):
    g = f.grid
    ax0, ax1 = g.axes
    X, Z = np.meshgrid(g.coords(ax0), g.coords(ax1), indexing="ij")
    I, J = np.meshgrid(np.arange(g.shape[0]), np.arange(g.shape[1]), indexing="ij")
    lines = [g.header(), *extra_header, f"i,j,{ax0},{ax1},value"]
    body = np.column_stack([I.ravel(), J.ravel(), X.ravel(), Z.ravel(), f.values.ravel()])
    lines += [f"{int(r[0])},{int(r[1])},{r[2]!r},{r[3]!r},{r[4]!r}" for r in body.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_field_values(path):
    """Read a field CSV back into a (nx+1, n2+1) array plus its header lines."""
    header = []
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            header.append(line)
        elif line and not line[0].isalpha():
            rows.append(line.split(","))
    data = np.array(rows, dtype=float)
    n0 = int(data[:, 0].max()) + 1
    n1 = int(data[:, 1].max()) + 1
    vals = np.empty((n0, n1))
    vals[data[:, 0].astype(int), data[:, 1].astype(int)] = data[:, 4]
    return vals, header
