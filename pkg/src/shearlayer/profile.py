"""Background shear profiles mu(y) on 0 <= y <= 2 with exact derivatives.

Profiles are symbolic expressions, so every derivative and every wall limit of
the ratios mu''/mu and mu'''/mu is computed without numerical differentiation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import sympy as sp

Y_SYM = sp.Symbol("y", real=True)

# Ratios are evaluated from wall series when closer than this to a wall.
WALL_SWITCH = 0.05
SERIES_ORDER = 14


class ProfileError(ValueError):
    """Raised for degenerate or unsupported profiles."""


def _vectorize(expr, var):
    fn = sp.lambdify(var, expr, modules="numpy")

    def call(v):
        v = np.asarray(v, dtype=float)
        return np.broadcast_to(np.asarray(fn(v), dtype=float), v.shape).copy()

    return call


@dataclass(frozen=True)
class ValidationRecord:
    checks: dict
    passed: bool

    def failures(self):
        return [name for name, (ok, _) in self.checks.items() if not ok]


@dataclass(frozen=True, eq=False)
class ShearProfile:
    """Shear profile mu(y) with wall speed ``ub`` and asserted vanishing order ``n0``."""

    expr: sp.Expr
    ub: float = 2.0
    n0: int = 5
    label: str = "custom"
    params: dict = field(default_factory=dict)

    @cached_property
    def _derivs(self):
        return {}

    def derivative_expr(self, k):
        cache = self._derivs
        if k not in cache:
            cache[k] = sp.diff(self.expr, Y_SYM, k) if k else self.expr
        return cache[k]

    def d(self, k, y):
        """k-th derivative of mu evaluated at ``y``."""
        key = ("eval", k)
        cache = self._derivs
        if key not in cache:
            cache[key] = _vectorize(self.derivative_expr(k), Y_SYM)
        return cache[key](y)

    def __call__(self, y):
        return self.d(0, y)

    def wall_derivative(self, k, wall):
        return float(sp.N(self.derivative_expr(k).subs(Y_SYM, 0 if wall == 0 else 2), 30))

    def _ratio(self, num_order):
        key = ("ratio", num_order)
        cache = self._derivs
        if key not in cache:
            cache[key] = RegularizedRatio(self.derivative_expr(num_order) / self.expr)
        return cache[key]

    @property
    def q2(self):
        """mu''/mu with removable wall singularities handled by series."""
        return self._ratio(2)

    @property
    def q3(self):
        """mu'''/mu with removable wall singularities handled by series."""
        return self._ratio(3)

    @property
    def is_couette(self):
        return sp.simplify(sp.diff(self.expr, Y_SYM, 2)) == 0


class RegularizedRatio:
    """Evaluator of a quotient ``num/mu`` and its y-derivatives on [0, 2].

    Away from the walls the symbolic derivative is evaluated directly; within
    ``WALL_SWITCH`` of a wall a truncated series about the wall is used, which
    removes the 0/0 form at the wall itself.
    """

    def __init__(self, expr):
        self.expr = sp.simplify(expr) if sp.count_ops(expr) < 40 else expr
        self._direct = {}
        self._series = {}

    def _direct_fn(self, k):
        if k not in self._direct:
            self._direct[k] = _vectorize(sp.diff(self.expr, Y_SYM, k), Y_SYM)
        return self._direct[k]

    def _wall_series(self, wall):
        if wall not in self._series:
            t = sp.Symbol("t", real=True)
            e = self.expr.subs(Y_SYM, t if wall == 0 else 2 - t)
            s = sp.series(e, t, 0, SERIES_ORDER).removeO()
            self._series[wall] = (t, sp.expand(s))
        return self._series[wall]

    def _series_fn(self, wall, k):
        key = (wall, k)
        if key not in self._direct:
            t, s = self._wall_series(wall)
            sign = 1 if wall == 0 else (-1) ** k
            ds = sign * sp.diff(s, t, k)
            fn = _vectorize(ds, t)
            singular = any(p.is_negative for p in _powers(ds, t))
            self._direct[key] = (fn, singular)
        return self._direct[key]

    def derivative(self, k, y):
        y = np.asarray(y, dtype=float)
        out = np.empty(y.shape)
        lo = y < WALL_SWITCH
        hi = y > 2 - WALL_SWITCH
        mid = ~(lo | hi)
        if np.any(mid):
            out[mid] = self._direct_fn(k)(y[mid])
        for wall, mask, dist in ((0, lo, y), (2, hi, 2 - y)):
            if np.any(mask):
                fn, singular = self._series_fn(wall, k)
                with np.errstate(divide="ignore", invalid="ignore"):
                    vals = fn(dist[mask])
                if singular:
                    vals = np.where(dist[mask] == 0, np.inf, vals)
                out[mask] = vals
        return out

    def __call__(self, y):
        return self.derivative(0, y)


def _powers(expr, t):
    return [term.as_coeff_exponent(t)[1] for term in sp.Add.make_args(sp.expand(expr))]


def validate(profile: ShearProfile, tol_value=1e-12, tol_vanish=1e-8) -> ValidationRecord:
    """Check the wall hypotheses on mu; failures are recorded, never raised."""
    checks = {}
    m0 = profile.wall_derivative(0, 0)
    m2 = profile.wall_derivative(0, 2)
    checks["mu(0)=0"] = (abs(m0) <= tol_value, abs(m0))
    checks["mu(2)=ub"] = (abs(m2 - profile.ub) <= tol_value, abs(m2 - profile.ub))
    d0 = profile.wall_derivative(1, 0)
    d2 = profile.wall_derivative(1, 2)
    checks["mu'(0)>0"] = (d0 > 0, d0)
    checks["|mu'(2)|>0"] = (abs(d2) > 0, abs(d2))
    for j in range(2, profile.n0 + 1):
        for wall in (0, 2):
            r = abs(profile.wall_derivative(j, wall))
            checks[f"d{j}mu({wall})=0"] = (r <= tol_vanish, r)
    passed = all(ok for ok, _ in checks.values())
    return ValidationRecord(checks, passed)


def c0(profile: ShearProfile, K=3, n=2001, wall_limit=1e12) -> float:
    """max over a uniform y-grid of sum_{k<=K} |d^k/dy^k (mu'''/mu)|."""
    y = np.linspace(0.0, 2.0, n)
    q3 = profile.q3
    total = np.zeros_like(y)
    for k in range(K + 1):
        vals = np.abs(q3.derivative(k, y))
        for idx in (0, -1):
            if not np.isfinite(vals[idx]) or vals[idx] > wall_limit:
                raise ProfileError(f"mu'''/mu is unbounded at the wall (derivative order {k})")
        total += vals
    if not np.all(np.isfinite(total)):
        raise ProfileError("mu'''/mu is unbounded inside the channel")
    return float(total.max())


def _ytilde():
    return Y_SYM * (2 - Y_SYM)


def make_profile(name="couette_plus_bump", alpha=0.1, n0=5, ub=2.0, expr=None) -> ShearProfile:
    """Build a profile from the built-in library.

    ``couette``            mu = ub y / 2
    ``couette_plus_bump``  mu = ub y / 2 + alpha (y (2 - y))^(n0 + 1)
    ``sine_bump``          mu = ub y / 2 + alpha sin(pi y / 2)^(n0 + 1)
    ``expr``               any sympy-parsable expression in y
    """
    ub_s = sp.nsimplify(ub)
    alpha_s = sp.nsimplify(alpha)
    base = ub_s * Y_SYM / 2
    if name == "couette":
        e = base
    elif name == "couette_plus_bump":
        e = base + alpha_s * _ytilde() ** (n0 + 1)
    elif name == "sine_bump":
        e = base + alpha_s * sp.sin(sp.pi * Y_SYM / 2) ** (n0 + 1)
    elif name == "expr":
        if expr is None:
            raise ProfileError("profile 'expr' needs an expression string")
        e = sp.sympify(expr, locals={"y": Y_SYM})
    else:
        raise ProfileError(f"unknown profile {name!r}")
    params = {"alpha": float(alpha), "n0": int(n0), "ub": float(ub)}
    if expr is not None:
        params["expr"] = str(expr)
    return ShearProfile(e, float(ub), int(n0), name, params)


def ytilde(y):
    return y * (2.0 - y)
