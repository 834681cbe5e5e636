"""Inviscid corrector layers: Rayleigh-type elliptic problems for v_e.

Both tiers solve ``-Lap v + q2(y) v = r`` with q2 = mu''/mu; tier 1 has
``r = mu'''/mu`` and zero boundary data, tier 2 has ``r = 0`` and wall data
taken from the first boundary layer. u_e and P_e are recovered from
incompressibility and the linearized momentum equations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid

from .numerics import Field2D, LinearSystem, PhysicalGrid, d1, d2, extend_x, solve_linear
from .profile import ShearProfile


class CompatibilityError(ValueError):
    """Raised when boundary data disagree at a corner of the channel."""


@dataclass
class EulerLayer:
    tier: int
    v: Field2D
    u: Field2D
    P: Field2D
    grid: PhysicalGrid
    # Laplacian of v evaluated through the equation, q2 v - r.
    lap_v: Field2D
    rhs: Field2D


def _second_difference(n, h):
    e = np.ones(n)
    return sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1]) / h**2


def rayleigh_matrix(grid: PhysicalGrid, q2_interior):
    """Matrix of -Lap_h + q2 on interior nodes, ordered with y fastest."""
    mx, my = grid.nx - 1, grid.ny - 1
    Ax = sp.kron(_second_difference(mx, grid.hx), sp.identity(my))
    Ay = sp.kron(sp.identity(mx), _second_difference(my, grid.hy))
    Q = sp.diags(np.tile(q2_interior, mx))
    return (-(Ax + Ay) + Q).tocsr()


def solve_rayleigh(grid: PhysicalGrid, q2, rhs, boundary=None, tol=1e-11):
    """Solve -Lap v + q2(y) v = rhs with Dirichlet values from ``boundary``.

    ``q2`` holds values at the y nodes, ``rhs`` and ``boundary`` are full node
    arrays; only the boundary ring of ``boundary`` is read.
    """
    v = np.zeros(grid.shape) if boundary is None else np.array(boundary, dtype=float)
    v[1:-1, 1:-1] = 0.0
    hx2, hy2 = grid.hx**2, grid.hy**2
    b = np.array(rhs[1:-1, 1:-1], dtype=float)
    b[0, :] += v[0, 1:-1] / hx2
    b[-1, :] += v[-1, 1:-1] / hx2
    b[:, 0] += v[1:-1, 0] / hy2
    b[:, -1] += v[1:-1, -1] / hy2
    A = rayleigh_matrix(grid, q2[1:-1])
    sol = solve_linear(LinearSystem(A, b.ravel(), tol))
    v[1:-1, 1:-1] = sol.reshape(grid.nx - 1, grid.ny - 1)
    return v


def recover_u(grid: PhysicalGrid, v):
    """u(x, y) = -int_0^x dv/dy, so that u_x + v_y = 0 and u(0, y) = 0."""
    return -cumulative_trapezoid(d1(v, grid.hy, 1), dx=grid.hx, axis=0, initial=0.0)


def recover_pressure(profile: ShearProfile, grid: PhysicalGrid, v, wall_rhs=0.0):
    """Pressure from the vertical momentum balance mu v_x + P_y = 0.

    The value on y = 0 comes from the horizontal balance there,
    P_x(x, 0) = wall_rhs - mu(0) u_x - mu'(0) v(x, 0), integrated from x = 0.
    """
    y = grid.y
    mu = profile(y)
    # v_x at x = 0, L through extrapolated ghosts: P is differentiated in x
    # again downstream, which a plain one-sided stencil would spoil there
    vx = d1(extend_x(v, 2, 2), grid.hx, 0)[2:-2]
    integrand = mu[None, :] * vx
    P = -cumulative_trapezoid(integrand, dx=grid.hy, axis=1, initial=0.0)
    mu0, dmu0 = float(mu[0]), float(profile.d(1, 0.0))
    ux_wall = -d1(v, grid.hy, 1)[:, 0]
    dPdx = wall_rhs - mu0 * ux_wall - dmu0 * v[:, 0]
    P += cumulative_trapezoid(dPdx, dx=grid.hx, initial=0.0)[:, None]
    return P


def _layer(tier, profile, grid, v, rhs, q2, wall_rhs):
    u = recover_u(grid, v)
    P = recover_pressure(profile, grid, v, wall_rhs)
    lap = q2[None, :] * v - rhs
    return EulerLayer(
        tier,
        Field2D(grid, v),
        Field2D(grid, u),
        Field2D(grid, P),
        grid,
        Field2D(grid, lap),
        Field2D(grid, rhs),
    )


def solve_first_euler(profile: ShearProfile, grid: PhysicalGrid, rhs=None) -> EulerLayer:
    """First inviscid corrector with zero data on all four sides.

    ``rhs`` replaces mu'''/mu when given (array on the full node set), which
    is the entry point for manufactured-solution checks.
    """
    y = grid.y
    q2 = profile.q2(y)
    if rhs is None:
        rhs = np.broadcast_to(profile.q3(y), grid.shape).copy()
        wall_rhs = float(profile.d(2, 0.0))
    else:
        rhs = np.asarray(rhs, dtype=float)
        wall_rhs = 0.0
    if not (np.all(np.isfinite(q2)) and np.all(np.isfinite(rhs))):
        raise FloatingPointError("mu''/mu or mu'''/mu is not finite on the grid")
    v = solve_rayleigh(grid, q2, rhs)
    return _layer(1, profile, grid, v, rhs, q2, wall_rhs)


def _trace(fn_or_values, x):
    if callable(fn_or_values):
        return np.asarray(fn_or_values(x), dtype=float) * np.ones_like(x)
    arr = np.asarray(fn_or_values, dtype=float)
    if arr.ndim == 0:
        return np.full_like(x, float(arr))
    if arr.shape != x.shape:
        raise ValueError(f"trace of length {arr.size} does not match {x.size} x-nodes")
    return arr


def solve_second_euler(profile: ShearProfile, grid: PhysicalGrid, bottom_trace, top_trace,
                       right_data="zero", corner_tol=1e-10) -> EulerLayer:
    """Second inviscid corrector driven by wall traces of the first boundary layer.

    ``bottom_trace`` and ``top_trace`` give v on y = 0 and y = 2, either as
    callables of x or as arrays on the x nodes. The data on x = 0 is zero. On
    x = L it is zero (``right_data="zero"``) or the linear interpolant of the
    two wall traces at x = L (``"linear"``), which keeps the data continuous
    at the outflow corners.
    """
    x, y = grid.x, grid.y
    gb = _trace(bottom_trace, x)
    gt = _trace(top_trace, x)
    scale = max(1.0, np.abs(gb).max(), np.abs(gt).max())
    if abs(gb[0]) > corner_tol * scale or abs(gt[0]) > corner_tol * scale:
        raise CompatibilityError(
            f"wall traces must vanish at x=0 (got {gb[0]:.3e}, {gt[0]:.3e})")
    boundary = np.zeros(grid.shape)
    boundary[:, 0] = gb
    boundary[:, -1] = gt
    if right_data == "linear":
        boundary[-1, :] = gb[-1] * (1 - y / 2) + gt[-1] * (y / 2)
    elif right_data != "zero":
        raise ValueError(f"unknown right_data {right_data!r}")
    q2 = profile.q2(y)
    rhs = np.zeros(grid.shape)
    v = solve_rayleigh(grid, q2, rhs, boundary)
    return _layer(2, profile, grid, v, rhs, q2, 0.0)


@dataclass(frozen=True)
class CompatibilityRecord:
    # corner name -> (data mismatch, second-order equation residual)
    corners: dict
    tol: float = 1e-6

    @property
    def flagged(self):
        return [k for k, (c0, c2) in self.corners.items() if max(c0, c2) > self.tol]


def check_compatibility(layer: EulerLayer, profile: ShearProfile, tol=1e-6) -> CompatibilityRecord:
    """Corner consistency of the boundary data with the elliptic equation.

    At each corner two quantities are recorded: the jump between the side
    data meeting there, and the residual of ``-v_xx - v_yy + q2 v = r``
    evaluated with one-sided second differences along the two sides.
    """
    g = layer.grid
    v = layer.v.values
    r = layer.rhs.values
    q2 = profile.q2(g.y)
    vxx = d2(v, g.hx, 0)
    vyy = d2(v, g.hy, 1)
    corners = {}
    names = {(0, 0): "x=0,y=0", (0, -1): "x=0,y=2", (-1, 0): "x=L,y=0", (-1, -1): "x=L,y=2"}
    for (i, j), name in names.items():
        # value along the wall next to the corner vs value along the x-side
        along_wall = 2 * v[i + (1 if i == 0 else -1), j] - v[i + (2 if i == 0 else -2), j]
        along_side = 2 * v[i, j + (1 if j == 0 else -1)] - v[i, j + (2 if j == 0 else -2)]
        jump = abs(along_wall - along_side)
        eq = abs(-vxx[i, j] - vyy[i, j] + q2[j] * v[i, j] - r[i, j])
        corners[name] = (float(jump), float(eq))
    return CompatibilityRecord(corners, tol)
