"""Wall layers: degenerate heat equations marched in x, cut-off composition,
and the auxiliary layer pressure.

Raw layers live on a :class:`BoundaryLayerGrid` in canonical coordinates,
where Y is the stretched distance to the wall and v points away from it.
The cut-off composites are mapped to the physical grid with the physical sign
of v (flipped for the top wall).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import solve_banded

from .numerics import BoundaryLayerGrid, Field2D, GridError, PhysicalGrid, d1, d2, extend_x
from .profile import ShearProfile


class DegeneracyError(ValueError):
    """Raised when the marching coefficient is not positive inside the layer."""


class LayerCompatibilityError(ValueError):
    """Raised when wall data does not vanish at the inflow x = 0."""


def smoothstep9(t):
    """C^4 step rising from 0 at t <= 0 to 1 at t >= 1, with its derivatives."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    s = t**5 * (126 - 420 * t + 540 * t**2 - 315 * t**3 + 70 * t**4)
    s1 = 630 * t**4 * (1 - t) ** 4
    s2 = 2520 * t**3 * (1 - t) ** 3 * (1 - 2 * t)
    s3 = 2520 * t**2 * (1 - t) ** 2 * (3 - 14 * t + 14 * t**2)
    return s, s1, s2, s3


@dataclass(frozen=True)
class CutoffSpec:
    """chi(d / scale) with chi = 1 for d <= scale and chi = 0 for d >= 2 scale.

    d is the physical distance to the wall. ``enabled=False`` gives chi = 1
    everywhere, which is a diagnostic mode only.
    """

    scale: float = 0.5
    enabled: bool = True

    def chi(self, s):
        """chi and its first three derivatives with respect to its argument s."""
        s = np.asarray(s, dtype=float)
        if not self.enabled:
            z = np.zeros_like(s)
            return np.ones_like(s), z, z, z
        st, s1, s2, s3 = smoothstep9(s - 1.0)
        return 1.0 - st, -s1, -s2, -s3


@dataclass
class PrandtlLayer:
    tier: int
    orientation: str
    grid: BoundaryLayerGrid
    eps: float
    u0: Field2D
    v0: Field2D
    coefficient: np.ndarray
    # x-antiderivative of v0, used by the divergence-preserving cut-off term
    V: Field2D | None = None
    u_p: Field2D | None = None
    v_p: Field2D | None = None
    chi: np.ndarray | None = None
    # cut-off error of the u-equation on the physical grid, term by term
    cut_terms: dict = field(default_factory=dict)
    # physical-grid arrays over the full extended x-range, see apply_cutoff
    ext: dict = field(default_factory=dict)

    @property
    def sign(self):
        return 1.0 if self.orientation == "bottom" else -1.0


def wall_distance(grid: PhysicalGrid, orientation):
    return grid.y if orientation == "bottom" else 2.0 - grid.y


def layer_coefficient(profile: ShearProfile, blgrid: BoundaryLayerGrid, eps, mode="literal"):
    """Coefficient of u_x in the layer equation at each Y node.

    ``literal``      mu evaluated at the physical point, capped at the midline
    ``linearized``   first-order Taylor polynomial of mu about the wall
    a number         frozen constant coefficient (test mode)
    """
    d = np.sqrt(eps) * blgrid.Y
    dc = np.minimum(d, 1.0)
    bottom = blgrid.orientation == "bottom"
    if isinstance(mode, (int, float)) and not isinstance(mode, bool):
        return np.full_like(d, float(mode))
    if mode == "literal":
        return profile(dc if bottom else 2.0 - dc)
    if mode == "linearized":
        if bottom:
            return profile.d(0, 0.0) + profile.d(1, 0.0) * dc
        return profile.d(0, 2.0) - profile.d(1, 2.0) * dc
    raise ValueError(f"unknown coefficient mode {mode!r}")


def march(coef, blgrid: BoundaryLayerGrid, wall, source=None, scheme="bdf2"):
    """March coef u_x - u_YY = source from zero data at x = 0.

    ``wall`` holds the Dirichlet values at Y = 0 for each x node; u = 0 is
    imposed at Y = Ymax. BDF2 starts with one backward Euler step.
    """
    if scheme not in ("backward_euler", "bdf2"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if np.any(coef[1:-1] <= 0):
        k = int(np.argmax(coef[1:-1] <= 0)) + 1
        raise DegeneracyError(f"layer coefficient {coef[k]:.3e} <= 0 at interior node Y={blgrid.Y[k]:.3f}")
    nx, nY = blgrid.nx, blgrid.nY
    hx, hY = blgrid.hx, blgrid.hY
    a = coef[1:-1]
    u = np.zeros(blgrid.shape)
    u[:, 0] = wall
    off = -1.0 / hY**2
    for i in range(1, nx + 1):
        bdf = scheme == "bdf2" and i >= 2
        c = 1.5 / hx if bdf else 1.0 / hx
        ab = np.zeros((3, nY - 1))
        ab[0, 1:] = off
        ab[1] = c * a + 2.0 / hY**2
        ab[2, :-1] = off
        if bdf:
            rhs = a * (2.0 * u[i - 1, 1:-1] - 0.5 * u[i - 2, 1:-1]) / hx
        else:
            rhs = a * u[i - 1, 1:-1] / hx
        if source is not None:
            rhs = rhs + source[i, 1:-1]
        rhs[0] -= off * u[i, 0]
        u[i, 1:-1] = solve_banded((1, 1), ab, rhs)
    return u


def _wall_values(wall_data, x):
    if callable(wall_data):
        return np.asarray(wall_data(x), dtype=float) * np.ones_like(x)
    w = np.asarray(wall_data, dtype=float)
    if w.ndim == 0:
        return np.full_like(x, float(w))
    if w.shape != x.shape:
        raise ValueError(f"wall data of length {w.size} does not match {x.size} x-nodes")
    return w


def _solve_layer(tier, profile, blgrid, wall_data, eps, source, coefficient, scheme, compat_tol):
    x = blgrid.x
    wall = _wall_values(wall_data, x)
    scale = max(1.0, float(np.abs(wall).max()))
    if abs(wall[0]) > compat_tol * scale:
        raise LayerCompatibilityError(f"wall data must vanish at x=0, got {wall[0]:.3e}")
    wall = wall.copy()
    wall[0] = 0.0
    coef = layer_coefficient(profile, blgrid, eps, coefficient)
    u = march(coef, blgrid, wall, source, scheme)
    ux = d1(u, blgrid.hx, 0)
    # u0 vanishes identically at x = 0, and so does u_x for compatible data
    ux[0] = 0.0
    if tier == 1:
        # v0 = int_Y^Ymax u_x
        run = cumulative_trapezoid(ux[:, ::-1], dx=blgrid.hY, axis=1, initial=0.0)
        v = run[:, ::-1]
    else:
        # v0 = -int_0^Y u_x
        v = -cumulative_trapezoid(ux, dx=blgrid.hY, axis=1, initial=0.0)
    V = cumulative_trapezoid(v, dx=blgrid.hx, axis=0, initial=0.0)
    return PrandtlLayer(tier, blgrid.orientation, blgrid, eps, Field2D(blgrid, u), Field2D(blgrid, v),
                        coef, Field2D(blgrid, V))


def solve_first_prandtl(profile: ShearProfile, blgrid: BoundaryLayerGrid, wall_data, eps,
                        coefficient="literal", scheme="bdf2", compat_tol=1e-12) -> PrandtlLayer:
    """First wall layer: coef u_x - u_YY = 0, u = wall_data at Y = 0, u -> 0 far out."""
    return _solve_layer(1, profile, blgrid, wall_data, eps, None, coefficient, scheme, compat_tol)


def solve_second_prandtl(profile: ShearProfile, blgrid: BoundaryLayerGrid, wall_data, f2, eps,
                         coefficient="literal", scheme="bdf2", compat_tol=1e-12) -> PrandtlLayer:
    """Second wall layer with source ``f2`` (array or Field2D on ``blgrid``)."""
    src = f2.values if isinstance(f2, Field2D) else np.asarray(f2, dtype=float)
    if src.shape != blgrid.shape:
        raise GridError(f"source of shape {src.shape} does not match layer grid {blgrid.shape}")
    return _solve_layer(2, profile, blgrid, wall_data, eps, src, coefficient, scheme, compat_tol)


def _to_physical(values, blgrid: BoundaryLayerGrid, Yq):
    out = np.empty((values.shape[0], Yq.size))
    Y = blgrid.Y
    for i in range(values.shape[0]):
        out[i] = np.interp(Yq, Y, values[i])
    return out


def apply_cutoff(layer: PrandtlLayer, spec: CutoffSpec, eps, grid: PhysicalGrid, pad=0) -> PrandtlLayer:
    """Cut the raw layer off away from its wall and map it to the physical grid.

    u_p = chi u0 - c chi' V and v_p = chi v0 with c = sqrt(eps)/scale, which
    keeps u_x + v_Y = 0. The error this introduces in the u-equation,
    coef u_x - u_YY applied to u_p minus chi times the raw equation, is

        -c mu chi' v0 - 3 c chi' u0_Y - 3 c^2 chi'' u0 + c^3 chi''' V.

    ``cut_terms`` maps each of the four terms to ``(k, shape)`` where the term
    equals ``c**k * shape``.

    The layer grid may run past x = L with the physical spacing. The marched
    columns beyond L, together with ``pad`` zero columns before x = 0 (where
    the layer vanishes), are kept in ``layer.ext`` so that x-derivatives of
    derived quantities can use central stencils up to both ends of the channel.
    """
    blg = layer.grid
    if blg.nx < grid.nx or abs(blg.hx - grid.hx) > 1e-12 * grid.hx:
        raise GridError("layer grid does not share the physical x nodes")
    se = math.sqrt(eps)
    d = wall_distance(grid, layer.orientation)
    Yq = d / se
    if spec.enabled and blg.Ymax * se < 2 * spec.scale:
        warnings.warn("layer grid stops before the cut-off region ends; truncated layer assumed decayed")
    u0 = _to_physical(layer.u0.values, blg, Yq)
    v0 = _to_physical(layer.v0.values, blg, Yq)
    V = _to_physical(layer.V.values, blg, Yq)
    uY = _to_physical(d1(layer.u0.values, blg.hY, 1), blg, Yq)
    c = se / spec.scale
    chi, c1, c2, c3 = (a[None, :] for a in spec.chi(d / spec.scale))
    mu = wall_profile_values(layer, grid)[None, :]
    cut = {
        "mu_chi1_v0": (1, -mu * c1 * v0),
        "chi1_dYu0": (1, -3 * c1 * uY),
        "chi2_u0": (2, -3 * c2 * u0),
        "chi3_V": (3, c3 * V),
    }

    def padded(a):
        return np.concatenate([np.zeros((pad, a.shape[1])), a]) if pad else a

    n = grid.nx + 1
    u_p = chi * u0 - c * c1 * V
    v_p = layer.sign * chi * v0
    layer.u_p = Field2D(grid, u_p[:n])
    layer.v_p = Field2D(grid, v_p[:n])
    layer.chi = chi[0]
    layer.cut_terms = {k: (p, a[:n]) for k, (p, a) in cut.items()}
    layer.ext = {"pad": pad, "u_p": padded(u_p), "v_p": padded(v_p),
                 "cut": {k: (p, padded(a)) for k, (p, a) in cut.items()}}
    return layer


def ext_window(layer: PrandtlLayer, key, ghost, n):
    """Rows of an extended layer array reaching ``ghost`` nodes past each end."""
    ext = layer.ext
    a = ext["cut"][key][1] if key in ext["cut"] else ext[key]
    lo = ext["pad"] - ghost
    if lo < 0 or lo + n + 2 * ghost > a.shape[0]:
        raise GridError(f"layer extension too short for {ghost} ghost columns")
    return a[lo:lo + n + 2 * ghost]


def available_ghost(layers, grid: PhysicalGrid):
    """Largest ghost width that every layer extension supports."""
    n = grid.nx + 1
    widths = [min(l.ext["pad"], l.ext["u_p"].shape[0] - l.ext["pad"] - n) for l in layers]
    return min(widths, default=0)


def wall_profile_values(layer: PrandtlLayer, grid: PhysicalGrid):
    """Layer coefficient sampled at the physical y nodes."""
    Yq = wall_distance(grid, layer.orientation) / math.sqrt(layer.eps)
    return np.interp(Yq, layer.grid.Y, layer.coefficient)


AUX_TERMS = (
    # name, eps-power, builder(f) -> array; f holds the physical fields
    ("mu_dxvp1", 1.5, lambda f: f["mu"] * f["vp1_x"]),
    ("ue1_dxvp1", 2.5, lambda f: f["ue1"] * f["vp1_x"]),
    ("up1_dxve1", 2.0, lambda f: f["up1"] * f["ve1_x"]),
    ("up1_dxvp1", 2.5, lambda f: f["up1"] * f["vp1_x"]),
    ("ve1_dyvp1", 2.5, lambda f: f["ve1"] * f["vp1_y"]),
    ("vp1_dyve1", 2.5, lambda f: f["vp1"] * f["ve1_y"]),
    ("vp1_dyvp1", 3.0, lambda f: f["vp1"] * f["vp1_y"]),
    ("dyy_vp1", 2.5, lambda f: -f["vp1_yy"]),
    ("dxx_vp1", 2.5, lambda f: -f["vp1_xx"]),
    ("ue2_dxvp1", 3.0, lambda f: f["ue2"] * f["vp1_x"]),
    ("up1_dxve2", 2.5, lambda f: f["up1"] * f["ve2_x"]),
    ("ve2_dyvp1", 3.0, lambda f: f["ve2"] * f["vp1_y"]),
    ("vp1_dyve2", 3.0, lambda f: f["vp1"] * f["ve2_y"]),
)


def aux_pressure(profile: ShearProfile, tier1, euler1, euler2, eps, ghost=None):
    """Layer pressure that balances the vertical momentum of the first wall layers.

    ``tier1`` is a sequence of cut-off first-tier layers (bottom and top).
    Returns ``(Pa, terms)`` where ``terms`` maps each integrand term name to
    ``(eps_power, eps^power * term)`` and

        Pa(x, y) = eps^-2 int_y^1 S(x, y') dy',   S = sum of the terms,

    so that eps^2 Pa_y + S = 0 exactly in the continuum.
    """
    grid = euler1.grid
    if ghost is None:
        ghost = available_ghost(tier1, grid)
    f = layer_fields(profile, grid, tier1, euler1, euler2, [], ghost)
    Pa, terms = aux_pressure_ext(f, eps, grid)
    sl = slice(ghost, ghost + grid.nx + 1)
    return Field2D(grid, Pa[sl]), {k: (p, v[sl]) for k, (p, v) in terms.items()}


def aux_pressure_ext(f, eps, grid: PhysicalGrid):
    """Auxiliary pressure and its integrand terms on the rows of ``f``."""
    if grid.ny % 2:
        raise GridError("ny must be even so that the midline y = 1 is a grid line")
    terms = {}
    S = np.zeros_like(f["mu"])
    for name, power, build in AUX_TERMS:
        val = eps**power * build(f)
        terms[name] = (power, val)
        S += val
    I = cumulative_trapezoid(S, dx=grid.hy, axis=1, initial=0.0)
    mid = grid.ny // 2
    return (I[:, mid:mid + 1] - I) / eps**2, terms


def layer_fields(profile, grid, tier1, euler1, euler2, tier2, ghost=0):
    """Fields and derivatives shared by the pressure and the ledger.

    Arrays cover the physical x nodes plus ``ghost`` columns on each side.
    Wall layers use their own extension; inner layers are extended by
    polynomial extrapolation. Rows ``ghost:ghost + nx + 1`` are the channel.
    """
    hx, hy = grid.hx, grid.hy
    y = grid.y
    n = grid.nx + 1
    shape = (n + 2 * ghost, grid.ny + 1)
    ones = np.ones(shape)
    f = {"mu": profile(y)[None, :] * ones,
         "dmu": profile.d(1, y)[None, :] * ones,
         "ddmu": profile.d(2, y)[None, :] * ones}
    zero = np.zeros(shape)
    for k, layer in ((1, euler1), (2, euler2)):
        f[f"ue{k}"] = extend_x(layer.u.values, ghost, ghost)
        f[f"ve{k}"] = extend_x(layer.v.values, ghost, ghost)
        f[f"lap_ve{k}"] = extend_x(layer.lap_v.values, ghost, ghost)
    f["up1"] = sum((ext_window(l, "u_p", ghost, n) for l in tier1), zero)
    f["vp1"] = sum((ext_window(l, "v_p", ghost, n) for l in tier1), zero)
    f["up2"] = sum((ext_window(l, "u_p", ghost, n) for l in tier2), zero)
    f["vp2"] = sum((ext_window(l, "v_p", ghost, n) for l in tier2), zero)
    for name in ("ue1", "ve1", "ue2", "ve2", "up1", "vp1", "up2", "vp2"):
        a = f[name]
        f[name + "_x"] = d1(a, hx, 0)
        f[name + "_y"] = d1(a, hy, 1)
    for name in ("ue1", "ue2", "up1", "vp1", "up2", "vp2"):
        f[name + "_xx"] = d2(f[name], hx, 0)
        f[name + "_yy"] = d2(f[name], hy, 1)
    return f
