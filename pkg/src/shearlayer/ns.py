"""Steady Navier-Stokes in the channel by Newton's method.

Equal-order finite differences on the node grid: central stencils inside,
one-sided second-order stencils at the ends. Continuity carries the term
``-beta (h/U) h^2 (D_xx - D_x D_x) P`` (and its y analogue), which vanishes
to fourth order on smooth pressures but damps the checkerboard mode that the
wide pressure-gradient stencil cannot see.

Boundary rows:

* walls: u, v prescribed, pressure by quadratic extrapolation along y;
* inflow x = 0: u, v from the reference flow, pressure extrapolated along x;
* outflow x = L: the stress-free pair applied to the departure from the
  reference flow, plus one-sided continuity.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .forcing import CompositeFlow, ExpansionConfig, assemble_composite, build_layers, divergence
from .numerics import Field2D, LinearSystem, PhysicalGrid, SolverFailure, solve_linear
from .profile import ShearProfile, c0

EPS_MIN = 1e-4


class NSConvergenceError(RuntimeError):
    """Raised when Newton's method stagnates; carries the residual trace."""

    def __init__(self, message, trace):
        super().__init__(f"{message}; residual trace {['%.3e' % r for r in trace]}")
        self.trace = list(trace)


@dataclass
class NSSolution:
    u: Field2D
    v: Field2D
    P: Field2D
    eps: float
    trace: list
    converged: bool

    @property
    def grid(self):
        return self.u.grid


def _d1_matrix(n, h):
    """Sparse matrix of :func:`numerics.d1` on n + 1 nodes."""
    m = n + 1
    rows, cols, vals = [], [], []
    for i in range(1, m - 1):
        rows += [i, i]
        cols += [i - 1, i + 1]
        vals += [-1.0, 1.0]
    rows += [0, 0, 0, m - 1, m - 1, m - 1]
    cols += [0, 1, 2, m - 1, m - 2, m - 3]
    vals += [-3.0, 4.0, -1.0, 3.0, -4.0, 1.0]
    return sp.csr_matrix((np.array(vals) / (2 * h), (rows, cols)), shape=(m, m))


def _d2_matrix(n, h):
    """Sparse matrix of :func:`numerics.d2` on n + 1 nodes."""
    m = n + 1
    rows, cols, vals = [], [], []
    for i in range(1, m - 1):
        rows += [i, i, i]
        cols += [i - 1, i, i + 1]
        vals += [1.0, -2.0, 1.0]
    rows += [0] * 4 + [m - 1] * 4
    cols += [0, 1, 2, 3, m - 1, m - 2, m - 3, m - 4]
    vals += [2.0, -5.0, 4.0, -1.0] * 2
    return sp.csr_matrix((np.array(vals) / h**2, (rows, cols)), shape=(m, m))


@dataclass
class _Operators:
    grid: PhysicalGrid
    Dx: sp.csr_matrix
    Dy: sp.csr_matrix
    Lap: sp.csr_matrix
    Stab: sp.csr_matrix
    Dx_out: sp.csr_matrix = field(repr=False, default=None)

    @classmethod
    def build(cls, grid: PhysicalGrid):
        Ix = sp.identity(grid.nx + 1, format="csr")
        Iy = sp.identity(grid.ny + 1, format="csr")
        d1x, d1y = _d1_matrix(grid.nx, grid.hx), _d1_matrix(grid.ny, grid.hy)
        d2x, d2y = _d2_matrix(grid.nx, grid.hx), _d2_matrix(grid.ny, grid.hy)
        Dx = sp.kron(d1x, Iy, format="csr")
        Dy = sp.kron(Ix, d1y, format="csr")
        Lap = (sp.kron(d2x, Iy) + sp.kron(Ix, d2y)).tocsr()
        Stab = (sp.kron(grid.hx**2 * (d2x - d1x @ d1x), Iy)
                + sp.kron(Ix, grid.hy**2 * (d2y - d1y @ d1y))).tocsr()
        return cls(grid, Dx, Dy, Lap, Stab)


def _node_sets(grid: PhysicalGrid):
    nx, ny = grid.nx, grid.ny
    I, J = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="ij")
    I, J = I.ravel(), J.ravel()
    wall = (J == 0) | (J == ny)
    inflow = (I == 0) & ~wall
    outflow = (I == nx) & ~wall
    interior = ~(wall | inflow | outflow)
    return interior, wall, inflow, outflow, I, J


def _extrapolation_rows(grid: PhysicalGrid, nodes, I, J, axis):
    """Rows of P_0 - 3 P_1 + 3 P_2 - P_3 = 0 marching inward along ``axis``."""
    ny1 = grid.ny + 1
    rows, cols, vals = [], [], []
    for k in np.flatnonzero(nodes):
        i, j = I[k], J[k]
        if axis == "y":
            step = 1 if j == 0 else -1
            idx = [i * ny1 + j + q * step for q in range(4)]
        else:
            idx = [(i + q) * ny1 + j for q in range(4)]
        rows += [k] * 4
        cols += idx
        vals += [1.0, -3.0, 3.0, -1.0]
    n = (grid.nx + 1) * ny1
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


class _System:
    """Residual and Jacobian of the discrete problem, with linear boundary rows."""

    def __init__(self, grid, eps, ub, reference, body_force, stabilization, wall_values):
        self.grid = grid
        self.eps = eps
        self.ops = ops = _Operators.build(grid)
        n = (grid.nx + 1) * (grid.ny + 1)
        self.n = n
        interior, wall, inflow, outflow, I, J = _node_sets(grid)
        self.interior = interior
        uref, vref, Pref = (np.asarray(a, dtype=float).ravel() for a in reference)
        fu, fv, fc = (np.zeros(n) if a is None else np.asarray(a, dtype=float).ravel() for a in body_force)
        self.fu, self.fv, self.fc = fu, fv, fc
        scale = max(1.0, abs(ub))
        self.beta = stabilization * min(grid.hx, grid.hy) / scale
        Z = sp.csr_matrix((n, n))
        Id = sp.identity(n, format="csr")

        def rows(mask):
            return sp.diags(mask.astype(float))

        # wall and inflow velocity rows
        dir_mask = wall | inflow
        if wall_values == "exact":
            u_wall = np.where(J == 0, 0.0, ub)
            u_dir = np.where(wall, u_wall, uref)
            v_dir = np.where(wall, 0.0, vref)
        else:
            u_dir, v_dir = uref, vref
        Bu_u = rows(dir_mask) @ Id
        Bv_v = rows(dir_mask) @ Id
        bu = np.where(dir_mask, u_dir, 0.0)
        bv = np.where(dir_mask, v_dir, 0.0)
        # outflow: tangential stress and normal stress on the departure from the reference
        Ro = rows(outflow)
        Bu_u = Bu_u + Ro @ ops.Dy
        Bu_v = Ro @ ops.Dx
        bu = bu + Ro @ (ops.Dy @ uref + ops.Dx @ vref)
        Bv_u = -2 * eps * (Ro @ ops.Dx)
        Bv_P = Ro @ Id
        bv = bv + Ro @ (Pref - 2 * eps * (ops.Dx @ uref))
        # pressure rows: extrapolation on walls and inflow, continuity at the outflow
        Bc_P = (_extrapolation_rows(grid, wall, I, J, "y")
                + _extrapolation_rows(grid, inflow, I, J, "x"))
        Bc_u = Ro @ ops.Dx
        Bc_v = Ro @ ops.Dy
        bc = Ro @ fc
        self.B = sp.bmat([[Bu_u, Bu_v, Z], [Bv_u, Bv_v, Bv_P], [Bc_u, Bc_v, Bc_P]], format="csr")
        self.b = np.concatenate([bu, bv, bc])
        self.M = rows(interior)

    def split(self, U):
        n = self.n
        return U[:n], U[n:2 * n], U[2 * n:]

    def residual(self, U):
        o, eps = self.ops, self.eps
        u, v, P = self.split(U)
        ru = u * (o.Dx @ u) + v * (o.Dy @ u) + o.Dx @ P - eps * (o.Lap @ u) - self.fu
        rv = u * (o.Dx @ v) + v * (o.Dy @ v) + o.Dy @ P - eps * (o.Lap @ v) - self.fv
        rc = o.Dx @ u + o.Dy @ v - self.beta * (o.Stab @ P) - self.fc
        m = self.interior
        inner = np.concatenate([np.where(m, ru, 0.0), np.where(m, rv, 0.0), np.where(m, rc, 0.0)])
        return inner + self.B @ U - self.b

    def jacobian(self, U):
        o, eps, M = self.ops, self.eps, self.M
        u, v, _ = self.split(U)
        du = sp.diags(u)
        dv = sp.diags(v)
        adv = du @ o.Dx + dv @ o.Dy
        Juu = adv + sp.diags(o.Dx @ u) - eps * o.Lap
        Juv = sp.diags(o.Dy @ u)
        Jvu = sp.diags(o.Dx @ v)
        Jvv = adv + sp.diags(o.Dy @ v) - eps * o.Lap
        J = sp.bmat([[M @ Juu, M @ Juv, M @ o.Dx],
                     [M @ Jvu, M @ Jvv, M @ o.Dy],
                     [M @ o.Dx, M @ o.Dy, -self.beta * (M @ o.Stab)]], format="csr")
        return J + self.B


def solve_ns(cfg, profile: ShearProfile, inflow: CompositeFlow, tol_ns=1e-10, max_iter=50,
             stabilization=1.0, body_force=None, initial=None, wall_values="exact",
             eps_min=EPS_MIN) -> NSSolution:
    """Newton solve of the steady equations around the reference flow ``inflow``.

    ``inflow`` supplies the inflow data, the outflow reference, and the
    initial guess unless ``initial`` = (u, v, P) arrays is given.
    ``body_force`` = (fu, fv, fc) adds sources to the momentum and continuity
    rows (manufactured-solution mode); ``wall_values="reference"`` then takes
    wall velocities from the reference instead of the no-slip values.
    """
    eps = cfg.eps if isinstance(cfg, ExpansionConfig) else float(cfg)
    if eps < eps_min:
        raise ValueError(f"eps = {eps:g} is below the solver floor {eps_min:g}; "
                         "refine the grid and lower eps_min explicitly if intended")
    grid = inflow.grid
    ref = (inflow.u_s.values, inflow.v_s.values, inflow.P_s.values)
    system = _System(grid, eps, profile.ub, ref, body_force or (None, None, None), stabilization,
                     wall_values)
    U = np.concatenate([np.asarray(a, dtype=float).ravel() for a in (initial or ref)])
    trace = []
    for _ in range(max_iter + 1):
        r = system.residual(U)
        res = float(np.abs(r).max())
        trace.append(res)
        if not math.isfinite(res):
            raise NSConvergenceError("Newton iteration diverged", trace)
        if res <= tol_ns:
            break
        if len(trace) > max_iter:
            raise NSConvergenceError(f"no convergence in {max_iter} Newton steps", trace)
        J = system.jacobian(U)
        try:
            dU = solve_linear(LinearSystem(J, -r, 1e-9))
        except SolverFailure as exc:
            raise NSConvergenceError(f"Newton step failed: {exc}", trace) from exc
        U = U + dU
    u, v, P = (a.reshape(grid.shape) for a in system.split(U))
    return NSSolution(Field2D(grid, u), Field2D(grid, v), Field2D(grid, P), eps, trace, True)


def newton_tail_constant(trace, threshold=1e-3):
    """max r_{k+1} / r_k^2 over consecutive residuals once r_k <= threshold."""
    vals = [b / a**2 for a, b in zip(trace, trace[1:]) if 0 < a <= threshold]
    return max(vals) if vals else 0.0


@dataclass
class RateStudy:
    label: str
    entries: list  # (eps, sup_err_u, sup_err_v, constant)
    slope: float
    solutions: list = field(default_factory=list, repr=False)
    composites: list = field(default_factory=list, repr=False)

    def to_csv(self, path):
        lines = ["epsilon,sup_err_u,sup_err_v,constant"]
        lines += [f"{e!r},{a!r},{b!r},{c!r}" for e, a, b, c in self.entries]
        lines.append(f"# slope: {self.slope!r}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def fit_slope(eps_list, errors):
    """Least-squares slope of log(error) against log(eps)."""
    e = np.asarray(errors, dtype=float)
    if np.all(e == 0):
        return 0.0
    return float(np.polyfit(np.log(eps_list), np.log(e), 1)[0])


def rate_study(profile: ShearProfile, cfg: ExpansionConfig, eps_list, grid: PhysicalGrid,
               layer_options=None, ns_options=None, keep=False) -> RateStudy:
    """Solve at each eps and fit sup|u - mu| + sup|v| against eps."""
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing")
    layer_options = layer_options or {}
    ns_options = ns_options or {}
    c = c0(profile)
    mu = profile(grid.y)[None, :]
    entries, sols, comps = [], [], []
    for eps in eps_list:
        if eps < ns_options.get("eps_min", EPS_MIN):
            raise ValueError(f"eps = {eps:g} is below the solver floor")
        if math.sqrt(eps) / 4 < grid.hy:
            warnings.warn(f"grid spacing {grid.hy:.3g} does not resolve the wall layer at eps={eps:g}")
        local = ExpansionConfig(eps, cfg.gamma, cfg.L)
        layers = build_layers(profile, grid, eps, **layer_options)
        comp = assemble_composite(local, layers)
        sol = solve_ns(local, profile, comp, **ns_options)
        eu = float(np.abs(sol.u.values - mu).max())
        ev = float(np.abs(sol.v.values).max())
        const = (eu + ev) / (c * eps) if c > 0 else 0.0
        entries.append((eps, eu, ev, const))
        if keep:
            sols.append(sol)
            comps.append(comp)
    slope = fit_slope(eps_list, [a + b for _, a, b, _ in entries])
    return RateStudy(profile.label, entries, slope, sols, comps)


def divergence_max(sol: NSSolution):
    return float(np.abs(divergence(sol.grid, sol.u.values, sol.v.values)[1:-1, 1:-1]).max())
