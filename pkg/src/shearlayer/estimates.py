"""Norms of the remainder problem and measured constants of the layer estimates.

Every check produces :class:`EstimateRecord` rows holding the measured
left-hand side, the bound shape it is compared with, and their ratio, which
plays the role of the constant hidden in a ``<~`` inequality. Constants are
judged by their stability across grids and eps values, never by a universal
threshold.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .forcing import CompositeFlow, ExpansionConfig, ForcingDecomposition
from .numerics import Field2D, PhysicalGrid, d1
from .profile import ShearProfile, c0

# Drift allowed between measured constants before they count as unstable.
STABILITY_FACTOR = 2.0


class BookkeepingError(RuntimeError):
    """Raised when a profile with c0 = 0 still produces nonzero O(eps^2) forcing."""


def l2(a, grid: PhysicalGrid):
    """Trapezoid L2 norm over the channel."""
    inner = trapezoid(np.asarray(a) ** 2, dx=grid.hy, axis=1)
    return math.sqrt(max(float(trapezoid(inner, dx=grid.hx)), 0.0))


def integral(a, grid: PhysicalGrid):
    return float(trapezoid(trapezoid(np.asarray(a), dx=grid.hy, axis=1), dx=grid.hx))


def over_ytilde(a, grid: PhysicalGrid):
    """a / (y (2 - y)); wall values by the one-sided limit a_y / (+-2).

    Only meaningful for fields vanishing on both walls.
    """
    a = np.asarray(a, dtype=float)
    y = grid.y
    out = np.empty_like(a)
    out[:, 1:-1] = a[:, 1:-1] / (y[1:-1] * (2 - y[1:-1]))[None, :]
    ay = d1(a, grid.hy, 1)
    out[:, 0] = ay[:, 0] / 2.0
    out[:, -1] = -ay[:, -1] / 2.0
    return out


@dataclass(frozen=True)
class NormSet:
    E: float
    P: float
    X: float
    sup: float
    weighted: dict = field(default_factory=dict)
    degenerate: bool = False


@dataclass(frozen=True)
class EstimateRecord:
    name: str
    lhs: float
    rhs: float
    ratio: float
    nx: int
    ny: int
    eps: float
    passed: bool
    note: str = ""


def _ratio(lhs, rhs):
    if rhs == 0:
        return 0.0 if lhs == 0 else math.inf
    return lhs / rhs


def compute_norms(u, v, composite: CompositeFlow, cfg: ExpansionConfig) -> NormSet:
    """Energy, positivity and X norms of a velocity pair on the physical grid."""
    uu = u.values if isinstance(u, Field2D) else np.asarray(u, dtype=float)
    vv = v.values if isinstance(v, Field2D) else np.asarray(v, dtype=float)
    g = composite.grid
    eps = cfg.eps
    se = math.sqrt(eps)
    ux, uy = d1(uu, g.hx, 0), d1(uu, g.hy, 1)
    vx, vy = d1(vv, g.hx, 0), d1(vv, g.hy, 1)
    E = se * math.sqrt(l2(ux, g) ** 2 + l2(uy, g) ** 2) + se * math.sqrt(l2(vx, g) ** 2 + l2(vy, g) ** 2)
    us = composite.u_s.values
    degenerate = bool(us.min() < -1e-12)
    P = math.sqrt(max(integral(np.abs(us) * (vx**2 + vy**2), g), 0.0))
    sup = se * max(float(np.abs(uu).max()), float(np.abs(vv).max()))
    X = E + eps ** (cfg.gamma / 2) * sup
    weighted = {
        "u_l2": l2(uu, g),
        "v_l2": l2(vv, g),
        "v_over_ytilde_l2": l2(over_ytilde(vv, g), g),
    }
    return NormSet(E, P, X, sup, weighted, degenerate)


def _max_ratio(lhs, shape, mask):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(mask & (shape > 0), lhs / np.where(shape > 0, shape, 1.0), 0.0)
    k = np.unravel_index(np.argmax(r), r.shape)
    return float(r[k]), float(lhs[k]), float(shape[k])


def check_profile_estimates(composite: CompositeFlow, profile: ShearProfile,
                            cfg: ExpansionConfig) -> list:
    """Measured constants of the pointwise bounds on the composite flow.

    bound.composite   |u_s,x| + |v_s,y| + |u_s - mu| <= C min(sqrt(eps) yt, eps)
    bound.shear       |u_s,y - mu'| <= C sqrt(eps)
    bound.v_dx<l>     |d_x^l v_s| <= C eps yt,  l = 0, 1, 2

    with yt = y (2 - y). Ratios are taken over interior nodes, where yt > 0.
    """
    g = composite.grid
    eps = cfg.eps
    se = math.sqrt(eps)
    us, vs = composite.u_s.values, composite.v_s.values
    y = g.y
    yt = np.broadcast_to(y * (2 - y), g.shape)
    mu = np.broadcast_to(profile(y), g.shape)
    dmu = np.broadcast_to(profile.d(1, y), g.shape)
    mask = np.zeros(g.shape, dtype=bool)
    mask[:, 1:-1] = True
    out = []

    def record(name, lhs, shape, note=""):
        r, l, s = _max_ratio(lhs, shape, mask)
        out.append(EstimateRecord(name, l, s, r, g.nx, g.ny, eps, math.isfinite(r), note))

    lhs1 = np.abs(d1(us, g.hx, 0)) + np.abs(d1(vs, g.hy, 1)) + np.abs(us - mu)
    record("bound.composite", lhs1, np.minimum(se * yt, eps))
    record("bound.composite.ytilde", lhs1, se * yt, "sqrt(eps) yt branch")
    record("bound.composite.eps", lhs1, np.full(g.shape, eps), "eps branch")
    record("bound.shear", np.abs(d1(us, g.hy, 1) - dmu), np.full(g.shape, se))
    dv = vs
    for l in range(3):
        record(f"bound.v_dx{l}", np.abs(dv), eps * yt)
        dv = d1(dv, g.hx, 0)
    return out


def check_T_estimates(forcing: ForcingDecomposition, profile: ShearProfile, cfg: ExpansionConfig,
                      c0_value=None) -> list:
    """||T1||, ||T2/yt||, eps^1/4 ||T1_y||, eps^1/4 ||T2_y|| relative to c0, and T2 on the walls."""
    g = forcing.T1.grid
    eps = cfg.eps
    c = c0(profile) if c0_value is None else c0_value
    T1, T2 = forcing.T1.values, forcing.T2.values
    norms = {
        "T1.l2": l2(T1, g),
        "T2_over_ytilde.l2": l2(over_ytilde(T2, g), g),
        "dyT1.l2.eps^1/4": eps**0.25 * l2(d1(T1, g.hy, 1), g),
        "dyT2.l2.eps^1/4": eps**0.25 * l2(d1(T2, g.hy, 1), g),
    }
    floor = 10 * max(g.hx, g.hy) ** 2
    if c == 0:
        big = {k: v for k, v in norms.items() if v > floor}
        if big:
            raise BookkeepingError(f"c0 = 0 but O(eps^2) forcing norms are nonzero: {big}")
    out = [EstimateRecord(k, v, c, _ratio(v, c) if c else 0.0, g.nx, g.ny, eps, True) for k, v in norms.items()]
    wall = max(float(np.abs(T2[:, 0]).max()), float(np.abs(T2[:, -1]).max()))
    tol = 1e-6 * float(np.abs(T2).max()) + 10 * g.hx * g.hy
    out.append(EstimateRecord("T2.wall", wall, tol, _ratio(wall, tol), g.nx, g.ny, eps, wall <= tol))
    return out


def remainder_fields(sol_u, sol_v, composite: CompositeFlow, eps, gamma):
    """(u^eps - u_s, v^eps - v_s) / eps^(3/2 + gamma)."""
    k = eps ** (1.5 + gamma)
    u = (np.asarray(sol_u) - composite.u_s.values) / k
    v = (np.asarray(sol_v) - composite.v_s.values) / k
    return u, v


def remainder_diagnostics(ns_solution, composite: CompositeFlow, forcing: ForcingDecomposition,
                          cfg: ExpansionConfig):
    """Norms of the extracted remainder and the measured constants of the
    energy, positivity and combined estimates.

    The remainder satisfies -eps Lap u + S_u + P_x = f with
    f = N1 - eps^-(3/2+gamma) F_u (F is the momentum residual of the
    composite) and N1 = -eps^(3/2+gamma) (u u_x + v u_y); likewise for g.
    """
    if ns_solution is None or not ns_solution.converged:
        raise ValueError("remainder diagnostics need a converged Navier-Stokes solution")
    g = composite.grid
    eps, gamma = cfg.eps, cfg.gamma
    k = eps ** (1.5 + gamma)
    u, v = remainder_fields(ns_solution.u.values, ns_solution.v.values, composite, eps, gamma)
    norms = compute_norms(u, v, composite, cfg)
    ux, uy = d1(u, g.hx, 0), d1(u, g.hy, 1)
    vx, vy = d1(v, g.hx, 0), d1(v, g.hy, 1)
    N1 = -k * (u * ux + v * uy)
    N2 = -k * (u * vx + v * vy)
    f = N1 - forcing.F_u.values / k
    gg = N2 - forcing.F_v.values / k
    R1 = integral(f * u, g) + eps * integral(gg * v, g)
    R2 = integral(-f * vy, g) + integral(gg * vx, g)
    fg2 = l2(f, g) ** 2 + l2(gg, g) ** 2
    rhs = abs(R1) + abs(R2) + eps ** (gamma / 2) * fg2
    X2 = norms.X**2
    theta = gamma / 4
    en_rhs = eps**-theta * norms.P**2 + abs(R1)
    pos_rhs = eps ** (1 - theta) * norms.E**2 + abs(R2)
    records = [
        EstimateRecord("remainder.X_inequality", X2, rhs, _ratio(X2, rhs), g.nx, g.ny, eps,
                       math.isfinite(_ratio(X2, rhs)), "X^2 <~ R1 + R2 + eps^(gamma/2) ||f,g||^2"),
        EstimateRecord("remainder.energy", norms.E**2, en_rhs, _ratio(norms.E**2, en_rhs), g.nx, g.ny, eps,
                       True, "reported only"),
        EstimateRecord("remainder.positivity", norms.P**2, pos_rhs, _ratio(norms.P**2, pos_rhs), g.nx, g.ny,
                       eps, True, "reported only"),
    ]
    values = {"R1": R1, "R2": R2, "fg_l2_sq": fg2, "E": norms.E, "P": norms.P, "X": norms.X,
              "sup": norms.sup, "degenerate": norms.degenerate}
    return norms, records, values


def stability(records_by_run, factor=STABILITY_FACTOR, label="grid"):
    """Compare same-named records across runs; pass when max/min ratio <= factor.

    Ratios that are all zero count as stable. Returns summary records named
    ``<name>:<label>-stability`` with lhs = max, rhs = min, ratio = drift.
    """
    by_name = {}
    for run in records_by_run:
        for r in run:
            by_name.setdefault(r.name, []).append(r)
    out = []
    for name, recs in by_name.items():
        vals = [r.ratio for r in recs]
        hi, lo = max(vals), min(vals)
        if hi == 0:
            drift = 1.0
        elif lo <= 0 or not math.isfinite(hi):
            drift = math.inf
        else:
            drift = hi / lo
        last = recs[-1]
        out.append(EstimateRecord(f"{name}:{label}-stability", hi, lo, drift, last.nx, last.ny, last.eps,
                                  drift <= factor, f"factor {factor}"))
    return out


def gamma_rescale_error(ns_solution, composite, eps, gamma_a, gamma_b):
    """max |u_b - eps^(gamma_a - gamma_b) u_a| relative to max |u_b| (zero fields give 0)."""
    ua, va = remainder_fields(ns_solution.u.values, ns_solution.v.values, composite, eps, gamma_a)
    ub, vb = remainder_fields(ns_solution.u.values, ns_solution.v.values, composite, eps, gamma_b)
    s = eps ** (gamma_a - gamma_b)
    scale = max(float(np.abs(ub).max()), float(np.abs(vb).max()), 1e-300)
    err = max(float(np.abs(ub - s * ua).max()), float(np.abs(vb - s * va).max()))
    return err / scale if scale > 1e-300 else err


def write_records(path, records):
    fields = list(EstimateRecord.__dataclass_fields__)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in records:
            row = asdict(r)
            for k in ("lhs", "rhs", "ratio", "eps"):
                row[k] = repr(float(row[k]))
            w.writerow(row)
