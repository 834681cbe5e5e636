"""Layer cascade, composite flow, and the forcing ledger.

Every ledger entry is a contribution to the steady momentum residual

    R(u, v, P) = (u . grad) u + grad P - eps Lap u

of the composite flow, so that summing a group gives that group's share of
R(u_s, v_s, P_s). The totals F_u, F_v are therefore R evaluated on the
composite, up to discretization error.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .euler import EulerLayer, solve_first_euler, solve_second_euler
from .numerics import BoundaryLayerGrid, Field2D, PhysicalGrid, d1, d2, extend_x, write_field_csv
from .prandtl import (
    CutoffSpec,
    apply_cutoff,
    aux_pressure_ext,
    available_ghost,
    ext_window,
    layer_fields,
    smoothstep9,
    solve_first_prandtl,
    solve_second_prandtl,
)
from .profile import ShearProfile


class LedgerError(KeyError):
    """Raised when a required ledger term is missing."""


# Columns added past each end of the channel so that nested x-derivatives
# of the layer fields stay central up to x = 0 and x = L.
GHOST = 12


@dataclass(frozen=True)
class ExpansionConfig:
    eps: float
    gamma: float = 0.05
    L: float = 0.5

    def __post_init__(self):
        if not 0 < self.eps <= 0.1:
            raise ValueError(f"eps must lie in (0, 0.1], got {self.eps}")
        if not 0 < self.gamma <= 0.1:
            raise ValueError(f"gamma must lie in (0, 0.1], got {self.gamma}")
        if not 0 < self.L <= 1:
            raise ValueError(f"L must lie in (0, 1], got {self.L}")


@dataclass
class LayerSet:
    profile: ShearProfile
    grid: PhysicalGrid
    eps: float
    euler1: EulerLayer
    euler2: EulerLayer
    prandtl1: tuple
    prandtl2: tuple
    Pa: Field2D
    aux_terms: dict
    C2u: Field2D
    c2u_terms: dict
    weights: tuple
    cutoff: CutoffSpec
    f2: tuple = ()
    ghost: int = 0
    Pa_ext: np.ndarray | None = None


@dataclass
class CompositeFlow:
    u_s: Field2D
    v_s: Field2D
    P_s: Field2D
    eps: float
    layers: LayerSet | None = None

    @property
    def grid(self):
        return self.u_s.grid


@dataclass
class LedgerTerm:
    name: str
    group: str
    power: float
    values: Field2D


@dataclass
class ForcingDecomposition:
    F_u: Field2D
    F_v: Field2D
    T1: Field2D
    T2: Field2D
    residue_u: Field2D
    residue_v: Field2D
    ledger: dict = field(default_factory=dict)
    C2v: Field2D | None = None

    def group_sum(self, group):
        terms = [t.values.values for t in self.ledger.values() if t.group == group]
        return sum(terms, np.zeros(self.F_u.grid.shape))


def partition_weights(y):
    """Smooth split w_bottom + w_top = 1, w_bottom = 1 for y <= 0.5, 0 for y >= 1.5."""
    s = smoothstep9(np.asarray(y) - 0.5)[0]
    return 1.0 - s, s


# Ledger displays. Each builder receives the field dictionary ``f`` and
# returns the term without its eps factor; the entry equals eps**power * term.
C1U = (
    ("ue1_dxue1", 2.0, lambda f: f["ue1"] * f["ue1_x"]),
    ("ue2_dxue1", 2.5, lambda f: f["ue2"] * f["ue1_x"]),
    ("ue1_dxue2", 2.5, lambda f: f["ue1"] * f["ue2_x"]),
    ("ue2_dxue2", 3.0, lambda f: f["ue2"] * f["ue2_x"]),
    ("ve1_dyue1", 2.0, lambda f: f["ve1"] * f["ue1_y"]),
    ("ve2_dyue1", 2.5, lambda f: f["ve2"] * f["ue1_y"]),
    ("ve1_dyue2", 2.5, lambda f: f["ve1"] * f["ue2_y"]),
    ("ve2_dyue2", 3.0, lambda f: f["ve2"] * f["ue2_y"]),
    ("lap_ue1", 2.0, lambda f: -(f["ue1_xx"] + f["ue1_yy"])),
    ("lap_ue2", 2.5, lambda f: -(f["ue2_xx"] + f["ue2_yy"])),
)

C1V = (
    ("ue1_dxve1", 2.0, lambda f: f["ue1"] * f["ve1_x"]),
    ("ue1_dxve2", 2.5, lambda f: f["ue1"] * f["ve2_x"]),
    ("ue2_dxve1", 2.5, lambda f: f["ue2"] * f["ve1_x"]),
    ("ue2_dxve2", 3.0, lambda f: f["ue2"] * f["ve2_x"]),
    ("ve1_dyve1", 2.0, lambda f: f["ve1"] * f["ve1_y"]),
    ("ve2_dyve1", 2.5, lambda f: f["ve2"] * f["ve1_y"]),
    ("ve1_dyve2", 2.5, lambda f: f["ve1"] * f["ve2_y"]),
    ("ve2_dyve2", 3.0, lambda f: f["ve2"] * f["ve2_y"]),
    ("lap_ve1", 2.0, lambda f: -f["lap_ve1"]),
    ("lap_ve2", 2.5, lambda f: -f["lap_ve2"]),
)

C2U = (
    ("dxPa", 2.0, lambda f: f["Pa_x"]),
    ("ue1_dxup1", 2.0, lambda f: f["ue1"] * f["up1_x"]),
    ("up1_dxue1", 2.0, lambda f: f["up1"] * f["ue1_x"]),
    ("up1_dxup1", 2.0, lambda f: f["up1"] * f["up1_x"]),
    ("ve1_dyup1", 2.0, lambda f: f["ve1"] * f["up1_y"]),
    ("vp1_dmu", 1.5, lambda f: f["vp1"] * f["dmu"]),
    ("vp1_dyue1", 2.5, lambda f: f["vp1"] * f["ue1_y"]),
    ("vp1_dyup1", 2.5, lambda f: f["vp1"] * f["up1_y"]),
    ("dxx_up1", 2.0, lambda f: -f["up1_xx"]),
    ("ue2_dxup1", 2.5, lambda f: f["ue2"] * f["up1_x"]),
    ("up1_dxue2", 2.5, lambda f: f["up1"] * f["ue2_x"]),
    ("ve2_dyup1", 2.5, lambda f: f["ve2"] * f["up1_y"]),
    ("vp1_dyue2", 3.0, lambda f: f["vp1"] * f["ue2_y"]),
)

C3U = (
    ("ue1_dxup2", 2.5, lambda f: f["ue1"] * f["up2_x"]),
    ("up1_dxup2", 2.5, lambda f: f["up1"] * f["up2_x"]),
    ("up2_dxup2", 3.0, lambda f: f["up2"] * f["up2_x"]),
    ("ue2_dxup2", 3.0, lambda f: f["ue2"] * f["up2_x"]),
    ("up2_dxue1", 2.5, lambda f: f["up2"] * f["ue1_x"]),
    ("up2_dxup1", 2.5, lambda f: f["up2"] * f["up1_x"]),
    ("up2_dxue2", 3.0, lambda f: f["up2"] * f["ue2_x"]),
    ("ve1_dyup2", 2.5, lambda f: f["ve1"] * f["up2_y"]),
    ("vp1_dyup2", 3.0, lambda f: f["vp1"] * f["up2_y"]),
    ("ve2_dyup2", 3.0, lambda f: f["ve2"] * f["up2_y"]),
    ("vp2_dyup2", 3.5, lambda f: f["vp2"] * f["up2_y"]),
    ("vp2_dmu", 2.0, lambda f: f["vp2"] * f["dmu"]),
    ("vp2_dyue1", 3.0, lambda f: f["vp2"] * f["ue1_y"]),
    ("vp2_dyup1", 3.0, lambda f: f["vp2"] * f["up1_y"]),
    ("vp2_dyue2", 3.5, lambda f: f["vp2"] * f["ue2_y"]),
    ("dxx_up2", 2.5, lambda f: -f["up2_xx"]),
)

C3V = (
    ("mu_dxvp2", 2.0, lambda f: f["mu"] * f["vp2_x"]),
    ("ue1_dxvp2", 3.0, lambda f: f["ue1"] * f["vp2_x"]),
    ("up1_dxvp2", 3.0, lambda f: f["up1"] * f["vp2_x"]),
    ("ue2_dxvp2", 3.5, lambda f: f["ue2"] * f["vp2_x"]),
    ("up2_dxvp2", 3.5, lambda f: f["up2"] * f["vp2_x"]),
    ("up2_dxve1", 2.5, lambda f: f["up2"] * f["ve1_x"]),
    ("up2_dxvp1", 3.0, lambda f: f["up2"] * f["vp1_x"]),
    ("up2_dxve2", 3.0, lambda f: f["up2"] * f["ve2_x"]),
    ("vp2_dyve1", 3.0, lambda f: f["vp2"] * f["ve1_y"]),
    ("vp2_dyvp1", 3.5, lambda f: f["vp2"] * f["vp1_y"]),
    ("vp2_dyve2", 3.5, lambda f: f["vp2"] * f["ve2_y"]),
    ("vp2_dyvp2", 4.0, lambda f: f["vp2"] * f["vp2_y"]),
    ("ve1_dyvp2", 3.0, lambda f: f["ve1"] * f["vp2_y"]),
    ("vp1_dyvp2", 3.5, lambda f: f["vp1"] * f["vp2_y"]),
    ("ve2_dyvp2", 3.5, lambda f: f["ve2"] * f["vp2_y"]),
    ("dxx_vp2", 3.0, lambda f: -f["vp2_xx"]),
    ("dyy_vp2", 3.0, lambda f: -f["vp2_yy"]),
)

CUT_NAMES = ("mu_chi1_v0", "chi1_dYu0", "chi2_u0", "chi3_V")

T1_TERMS = ("C1u.ue1_dxue1", "C1u.ve1_dyue1", "C1u.lap_ue1", "C3u.ve1_dyup2", "C3u.vp2_dmu",
            "Ccut.mu_chi1_v0", "Ccut.chi1_dYu0")
T2_TERMS = ("C1v.ue1_dxve1", "C1v.ve1_dyve1", "C1v.lap_ve1", "C3v.mu_dxvp2")

F_U_GROUPS = ("C1u", "C3u", "Ccut")
F_V_GROUPS = ("C1v", "C3v")


def _evaluate(display, prefix, f, eps):
    return {f"{prefix}.{name}": (power, eps**power * build(f)) for name, power, build in display}


def _restrict(entries, ghost, n):
    return {k: (p, v[ghost:ghost + n]) for k, (p, v) in entries.items()}


def _cut_entries(prefix, layers, base_power, eps, scale, ghost, n):
    out = {}
    for name in CUT_NAMES:
        k = layers[0].cut_terms[name][0]
        shape = sum(ext_window(l, name, ghost, n) for l in layers)
        out[f"{prefix}.{name}"] = (base_power + 0.5 * k, eps ** (base_power + 0.5 * k) * shape / scale**k)
    return out


def _c2u_entries(eps, f, prandtl1, scale, ghost, n):
    terms = _evaluate(C2U, "C2u", f, eps)
    terms.update(_cut_entries("C1cut", prandtl1, 1.0, eps, scale, ghost, n))
    return terms


def assemble_C2u(eps, profile, euler1, euler2, prandtl1, Pa, cutoff: CutoffSpec, ghost=None):
    """Ledger terms fed forward to the second wall layers, and their sum.

    ``Pa`` is the auxiliary pressure on the channel; past its ends it is
    extended by extrapolation.
    """
    grid = euler1.grid
    n = grid.nx + 1
    if ghost is None:
        ghost = available_ghost(prandtl1, grid)
    f = layer_fields(profile, grid, prandtl1, euler1, euler2, [], ghost)
    f["Pa_x"] = d1(extend_x(Pa.values, ghost, ghost), grid.hx, 0)
    terms = _restrict(_c2u_entries(eps, f, prandtl1, cutoff.scale, ghost, n), ghost, n)
    total = sum((v for _, v in terms.values()), np.zeros(grid.shape))
    return Field2D(grid, total), terms


def _layer_source(values, grid: PhysicalGrid, blgrid: BoundaryLayerGrid, eps):
    """Sample rows of a physical-grid field at the layer nodes; zero beyond the channel."""
    d = np.sqrt(eps) * blgrid.Y
    yq = d if blgrid.orientation == "bottom" else 2.0 - d
    out = np.zeros(blgrid.shape)
    inside = d <= 2.0 + 1e-12
    for i in range(blgrid.nx + 1):
        out[i, inside] = np.interp(yq[inside], grid.y, values[i])
    return out


def build_layers(profile: ShearProfile, grid: PhysicalGrid, eps, cutoff=None, coefficient="literal",
                 scheme="bdf2", right_data="linear", euler1=None, ghost=GHOST, min_height=20.0,
                 min_nY=0) -> LayerSet:
    """Run the full cascade of inner and wall layers at one eps.

    Wall layers are marched ``ghost`` cells past x = L, and every field that
    is differentiated again downstream is built over that extended range.
    ``min_height`` and ``min_nY`` bound the layer grid from below.
    """
    cutoff = cutoff or CutoffSpec()
    n = grid.nx + 1
    G = ghost
    if euler1 is None:
        euler1 = solve_first_euler(profile, grid)
    blg = {o: BoundaryLayerGrid.aligned(grid, eps, o, min_height, G, min_nY) for o in ("bottom", "top")}

    def wall_data(layer, j):
        return -extend_x(layer.u.values[:, j], 0, G)

    p1 = tuple(
        apply_cutoff(solve_first_prandtl(profile, blg[o], wall_data(euler1, j), eps, coefficient, scheme),
                     cutoff, eps, grid, pad=G)
        for o, j in (("bottom", 0), ("top", -1)))
    vp1 = p1[0].v_p.values + p1[1].v_p.values
    euler2 = solve_second_euler(profile, grid, -vp1[:, 0], -vp1[:, -1], right_data=right_data)
    f = layer_fields(profile, grid, p1, euler1, euler2, [], G)
    Pa_ext, aux_ext = aux_pressure_ext(f, eps, grid)
    f["Pa_x"] = d1(Pa_ext, grid.hx, 0)
    c2u_ext = _c2u_entries(eps, f, p1, cutoff.scale, G, n)
    C2u_ext = sum((v for _, v in c2u_ext.values()), np.zeros_like(Pa_ext))
    w = partition_weights(grid.y)
    f2 = []
    p2 = []
    for (o, j), wk in zip((("bottom", 0), ("top", -1)), w):
        src = -_layer_source(C2u_ext[G:] * wk[None, :], grid, blg[o], eps) / eps**1.5
        f2.append(src)
        raw = solve_second_prandtl(profile, blg[o], wall_data(euler2, j), src, eps, coefficient, scheme)
        p2.append(apply_cutoff(raw, cutoff, eps, grid, pad=G))
    sl = slice(G, G + n)
    return LayerSet(profile, grid, eps, euler1, euler2, p1, tuple(p2), Field2D(grid, Pa_ext[sl]),
                    _restrict(aux_ext, G, n), Field2D(grid, C2u_ext[sl]), _restrict(c2u_ext, G, n),
                    w, cutoff, tuple(f2), G, Pa_ext)


def assemble_composite(cfg, layers: LayerSet) -> CompositeFlow:
    """u_s = mu + eps (u_e1 + u_p1) + eps^1.5 (u_e2 + u_p2), and likewise v_s, P_s.

    ``cfg`` is an :class:`ExpansionConfig` or a bare eps; eps = 0 returns the
    background shear.
    """
    eps = cfg.eps if isinstance(cfg, ExpansionConfig) else float(cfg)
    g = layers.grid
    mu = np.broadcast_to(layers.profile(g.y), g.shape)
    up1 = sum(l.u_p.values for l in layers.prandtl1)
    vp1 = sum(l.v_p.values for l in layers.prandtl1)
    up2 = sum(l.u_p.values for l in layers.prandtl2)
    vp2 = sum(l.v_p.values for l in layers.prandtl2)
    e1, e2 = layers.euler1, layers.euler2
    se = math.sqrt(eps)
    u = mu + eps * (e1.u.values + up1) + eps * se * (e2.u.values + up2)
    v = eps * e1.v.values + eps * se * (vp1 + e2.v.values) + eps**2 * vp2
    P = eps * e1.P.values + eps * se * e2.P.values + eps**2 * layers.Pa.values
    return CompositeFlow(Field2D(g, u), Field2D(g, v), Field2D(g, P), eps, layers)


def assemble_forcing(cfg, composite: CompositeFlow) -> ForcingDecomposition:
    """All ledger terms, the totals F_u, F_v and their split into eps^2 T + residue."""
    layers = composite.layers
    eps = composite.eps if cfg is None else (cfg.eps if isinstance(cfg, ExpansionConfig) else float(cfg))
    g = layers.grid
    G, n = layers.ghost, g.nx + 1
    f = layer_fields(layers.profile, g, layers.prandtl1, layers.euler1, layers.euler2, layers.prandtl2, G)
    entries = {}
    entries.update(_evaluate(C1U, "C1u", f, eps))
    entries.update(_evaluate(C1V, "C1v", f, eps))
    entries.update(_evaluate(C3U, "C3u", f, eps))
    entries.update(_evaluate(C3V, "C3v", f, eps))
    entries.update(_cut_entries("Ccut", layers.prandtl2, 1.5, eps, layers.cutoff.scale, G, n))
    entries = _restrict(entries, G, n)
    chi_w = sum(l.chi[None, :] * w[None, :] for l, w in zip(layers.prandtl2, layers.weights))
    entries["Ccut.leftover"] = (0.0, (1.0 - chi_w) * layers.C2u.values)
    entries.update({k: v for k, v in layers.c2u_terms.items()})
    aux = {f"C2v.{k}": v for k, v in layers.aux_terms.items()}
    aux["C2v.dyPa"] = (2.0, eps**2 * d1(layers.Pa.values, g.hy, 1))
    entries.update(aux)

    ledger = {name: LedgerTerm(name, name.split(".")[0], power, Field2D(g, val))
              for name, (power, val) in entries.items()}
    check_ledger(ledger)

    def total(groups):
        return sum((t.values.values for t in ledger.values() if t.group in groups), np.zeros(g.shape))

    F_u = total(F_U_GROUPS)
    F_v = total(F_V_GROUPS)
    T1 = sum(ledger[n].values.values for n in T1_TERMS) / eps**2
    T2 = sum(ledger[n].values.values for n in T2_TERMS) / eps**2
    return ForcingDecomposition(
        Field2D(g, F_u), Field2D(g, F_v), Field2D(g, T1), Field2D(g, T2),
        Field2D(g, F_u - eps**2 * T1), Field2D(g, F_v - eps**2 * T2), ledger,
        Field2D(g, total(("C2v",))))


def required_terms():
    names = [f"C1u.{n}" for n, _, _ in C1U] + [f"C1v.{n}" for n, _, _ in C1V]
    names += [f"C2u.{n}" for n, _, _ in C2U] + [f"C1cut.{n}" for n in CUT_NAMES]
    names += [f"C3u.{n}" for n, _, _ in C3U] + [f"C3v.{n}" for n, _, _ in C3V]
    names += ["Ccut.leftover"] + [f"Ccut.{n}" for n in CUT_NAMES]
    return names


def check_ledger(ledger):
    for name in required_terms():
        if name not in ledger:
            raise LedgerError(f"ledger term {name} is missing")


def momentum_defect(grid: PhysicalGrid, u, v, P, eps):
    """eps Lap u - (u . grad) u - grad P with the central/one-sided stencils."""
    hx, hy = grid.hx, grid.hy
    du = eps * (d2(u, hx, 0) + d2(u, hy, 1)) - u * d1(u, hx, 0) - v * d1(u, hy, 1) - d1(P, hx, 0)
    dv = eps * (d2(v, hx, 0) + d2(v, hy, 1)) - u * d1(v, hx, 0) - v * d1(v, hy, 1) - d1(P, hy, 1)
    return du, dv


def divergence(grid: PhysicalGrid, u, v):
    return d1(u, grid.hx, 0) + d1(v, grid.hy, 1)


def residual_identity(composite: CompositeFlow, forcing: ForcingDecomposition):
    """Interior max of |defect + F| for both momentum components."""
    g = composite.grid
    du, dv = momentum_defect(g, composite.u_s.values, composite.v_s.values, composite.P_s.values,
                             composite.eps)
    ru = (du + forcing.F_u.values)[1:-1, 1:-1]
    rv = (dv + forcing.F_v.values)[1:-1, 1:-1]
    return float(np.abs(ru).max()), float(np.abs(rv).max())


def dump_ledger(forcing: ForcingDecomposition, outdir):
    """One CSV per ledger term plus an index mapping term -> eps-power -> file."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    index = {}
    for name, term in sorted(forcing.ledger.items()):
        fname = f"{name.replace('.', '_')}.csv"
        write_field_csv(outdir / fname, term.values, (f"# term: {name}, power: {term.power}",))
        index[name] = {"power": term.power, "file": fname}
    (outdir / "ledger_index.json").write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
    return index
