"""Config-driven run: profile -> layers -> composite -> forcing -> estimates -> NS study."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .estimates import (
    check_profile_estimates,
    check_T_estimates,
    gamma_rescale_error,
    remainder_diagnostics,
    stability,
    write_records,
)
from .forcing import ExpansionConfig, assemble_composite, assemble_forcing, build_layers, dump_ledger
from .numerics import PhysicalGrid, write_field_csv
from .ns import NSConvergenceError, fit_slope, solve_ns
from .prandtl import CutoffSpec
from .profile import c0, make_profile, validate

log = logging.getLogger("shearlayer")

EXIT_PASS, EXIT_GATE, EXIT_ERROR = 0, 1, 2


class ConfigError(ValueError):
    """Raised for malformed run configurations."""


DEFAULTS = {
    "profile": {"name": "couette_plus_bump", "alpha": 0.1, "n0": 5, "ub": 2.0},
    "grid": {"nx": 64, "ny": 64, "nY": 0, "Ymax": 20.0},
    "expansion": {"eps": [1e-2], "gamma": 0.05, "L": 0.5, "coefficient": "literal",
                  "cutoff_scale": 0.5, "right_data": "linear"},
    "verification": {"estimates": True, "ns": True, "grid_refine": False, "dump_ledger": False,
                     "slope_min": 0.9},
    "ns": {"tol": 1e-10, "max_iter": 50, "stabilization": 1.0, "eps_list": []},
    "output": {"dir": "shearlayer_out"},
}


@dataclass
class RunConfig:
    profile: dict
    grid: dict
    expansion: dict
    verification: dict
    ns: dict
    output: dict
    source: str = ""

    @property
    def eps_list(self):
        return [float(e) for e in self.expansion["eps"]]

    @property
    def ns_eps(self):
        return [float(e) for e in (self.ns["eps_list"] or self.expansion["eps"])]

    @property
    def all_eps(self):
        return sorted(set(self.eps_list) | set(self.ns_eps), reverse=True)

    def echo(self):
        return {k: getattr(self, k) for k in ("profile", "grid", "expansion", "verification", "ns", "output")}


def load_config(path) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    text = Path(path).read_text()
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    merged = {}
    for block, defaults in DEFAULTS.items():
        given = raw.get(block, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{block}] must be a table")
        unknown = set(given) - set(defaults) - {"expr"}
        if unknown:
            raise ConfigError(f"unknown keys in [{block}]: {sorted(unknown)}")
        merged[block] = {**defaults, **given}
    extra = set(raw) - set(DEFAULTS)
    if extra:
        raise ConfigError(f"unknown sections: {sorted(extra)}")
    for block, key, allow_empty in (("expansion", "eps", False), ("ns", "eps_list", True)):
        eps = merged[block][key]
        if isinstance(eps, (int, float)):
            eps = merged[block][key] = [eps]
        if not eps and not allow_empty:
            raise ConfigError(f"{block}.{key} must be a nonempty list")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"{block}.{key} must be sorted in strictly descending order")
        for e in eps:
            ExpansionConfig(float(e), float(merged["expansion"]["gamma"]), float(merged["expansion"]["L"]))
    g = merged["grid"]
    if int(g["nx"]) < 8 or int(g["ny"]) < 8 or int(g["ny"]) % 2:
        raise ConfigError("grid.nx, grid.ny must be >= 8 and grid.ny even")
    return RunConfig(**merged, source=str(path))


def _threads():
    try:
        return max(1, int(os.environ.get("SHEARLAYER_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class Stage:
    status: str = "pending"
    seconds: float = 0.0
    message: str = ""


@dataclass
class RunManifest:
    config: dict
    stages: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    gates: dict = field(default_factory=dict)

    def write(self, outdir: Path):
        outdir = Path(outdir)
        self.files = {}
        for p in sorted(outdir.rglob("*")):
            if p.is_file() and p.name != "manifest.json":
                self.files[str(p.relative_to(outdir))] = hashlib.sha256(p.read_bytes()).hexdigest()
        data = {
            "config": self.config,
            "stages": {k: vars(v) for k, v in self.stages.items()},
            "gates": self.gates,
            "files": self.files,
        }
        (outdir / "manifest.json").write_text(json.dumps(data, indent=1, sort_keys=True, default=str) + "\n")


class _Runner:
    def __init__(self, cfg: RunConfig, outdir: Path):
        self.cfg = cfg
        self.out = outdir
        self.manifest = RunManifest(cfg.echo())
        self.records = []
        self.summary = []

    def stage(self, name, fn):
        st = Stage("running")
        self.manifest.stages[name] = st
        t0 = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:  # recorded in the manifest, then re-raised
            st.status, st.message = "error", f"{type(exc).__name__}: {exc}"
            st.seconds = round(time.perf_counter() - t0, 3)
            raise
        st.status = "ok"
        st.seconds = round(time.perf_counter() - t0, 3)
        return result

    def gate(self, name, passed, detail=""):
        self.manifest.gates[name] = {"passed": bool(passed), "detail": detail}
        self.summary.append(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")


def _per_eps(cfg: RunConfig, profile, grid, eps, outdir: Path | None):
    ex = cfg.expansion
    ecfg = ExpansionConfig(eps, float(ex["gamma"]), float(ex["L"]))
    layers = build_layers(profile, grid, eps, cutoff=CutoffSpec(float(ex["cutoff_scale"])),
                          coefficient=ex["coefficient"], right_data=ex["right_data"],
                          min_height=float(cfg.grid["Ymax"]), min_nY=int(cfg.grid["nY"]))
    comp = assemble_composite(ecfg, layers)
    forcing = assemble_forcing(ecfg, comp)
    if outdir is None:
        return ecfg, layers, comp, forcing
    d = outdir / f"eps_{eps:.6g}"
    d.mkdir(parents=True, exist_ok=True)
    hdr = (f"# epsilon: {eps!r}",)
    for name, f in (("u_s", comp.u_s), ("v_s", comp.v_s), ("P_s", comp.P_s),
                    ("T1", forcing.T1), ("T2", forcing.T2), ("F_u", forcing.F_u), ("F_v", forcing.F_v)):
        write_field_csv(d / f"{name}.csv", f, hdr)
    _write_layer_profiles(d / "layer_profiles.csv", layers)
    if cfg.verification["dump_ledger"]:
        dump_ledger(forcing, d / "ledger")
    return ecfg, layers, comp, forcing


def _write_layer_profiles(path, layers):
    """Raw wall-layer profiles u0(x = L, Y) for each tier and wall."""
    cols, names = [], []
    n = layers.grid.nx
    for tier, group in ((1, layers.prandtl1), (2, layers.prandtl2)):
        for l in group:
            cols.append(l.u0.values[n])
            names.append(f"u0_tier{tier}_{l.orientation}")
    Y = layers.prandtl1[0].grid.Y
    lines = [f"# layer: u0 at x = {layers.grid.L!r}", f"# epsilon: {layers.eps!r}", "Y," + ",".join(names)]
    for k in range(Y.size):
        lines.append(",".join(repr(float(v)) for v in [Y[k], *(c[k] for c in cols)]))
    Path(path).write_text("\n".join(lines) + "\n")


def run(config_path, outdir=None) -> int:
    """Execute every stage; returns 0 (all gates pass), 1 (a gate failed) or 2 (error)."""
    try:
        cfg = load_config(config_path)
    except (ConfigError, ValueError, OSError) as exc:
        log.error("config error: %s", exc)
        return EXIT_ERROR
    out = Path(outdir or cfg.output["dir"])
    out.mkdir(parents=True, exist_ok=True)
    r = _Runner(cfg, out)
    try:
        code = _run_stages(r, cfg, out)
    except Exception as exc:
        log.error("stage failed: %s", exc)
        code = EXIT_ERROR
    (out / "summary.txt").write_text("\n".join(r.summary) + "\n")
    r.manifest.write(out)
    return code


def _run_stages(r: _Runner, cfg: RunConfig, out: Path) -> int:
    pc = cfg.profile

    def do_validate():
        prof = make_profile(pc["name"], pc["alpha"], pc["n0"], pc["ub"], pc.get("expr"))
        rec = validate(prof)
        (out / "validation.json").write_text(json.dumps(
            {k: {"ok": bool(ok), "residual": float(v)} for k, (ok, v) in rec.checks.items()},
            indent=1, sort_keys=True) + "\n")
        return prof, rec

    profile, rec = r.stage("validate", do_validate)
    r.gate("profile.validate", rec.passed, ",".join(rec.failures()))
    if not rec.passed:
        return EXIT_GATE
    cval = r.stage("c0", lambda: c0(profile))
    grid = PhysicalGrid(float(cfg.expansion["L"]), int(cfg.grid["nx"]), int(cfg.grid["ny"]))

    def do_layers():
        with ThreadPoolExecutor(max_workers=min(_threads(), len(cfg.all_eps))) as pool:
            done = pool.map(lambda e: _per_eps(cfg, profile, grid, e, out), cfg.all_eps)
            return dict(zip(cfg.all_eps, done))

    runs = r.stage("layers_forcing", do_layers)
    failed = False
    if cfg.verification["estimates"]:
        failed |= _estimate_stage(r, cfg, profile, grid, runs, cval, out)
    if cfg.verification["ns"]:
        failed |= _ns_stage(r, cfg, profile, grid, runs, cval, out)
    return EXIT_GATE if failed else EXIT_PASS


def _estimates_for(profile, cval, run):
    ecfg, _, comp, forcing = run
    return check_profile_estimates(comp, profile, ecfg) + check_T_estimates(forcing, profile, ecfg, cval)


def _estimate_stage(r, cfg, profile, grid, runs, cval, out) -> bool:
    """Estimate records, eps-stability and optional grid-stability gates; True if a gate failed."""
    def do_estimates():
        per = [_estimates_for(profile, cval, runs[e]) for e in cfg.eps_list]
        fine = []
        if cfg.verification["grid_refine"]:
            g2 = PhysicalGrid(grid.L, 2 * grid.nx, 2 * grid.ny)
            fine = [_estimates_for(profile, cval, _per_eps(cfg, profile, g2, e, None)) for e in cfg.eps_list]
        return per, fine

    per, fine = r.stage("estimates", do_estimates)
    flat = [x for p in per + fine for x in p]
    stab = stability(per, label="eps") if len(per) > 1 else []
    for coarse, refined in zip(per, fine):
        stab += stability([coarse, refined], label=f"grid@eps={coarse[0].eps:.6g}")
    write_records(out / "estimates.csv", flat + stab)
    wall_ok = all(x.passed for x in flat if x.name == "T2.wall")
    r.gate("T2.wall", wall_ok)
    for s in stab:
        if not s.name.startswith("T2.wall"):
            r.gate(s.name, s.passed, f"drift {s.ratio:.3g}")
    return not wall_ok or not all(s.passed for s in stab)


def _ns_stage(r, cfg, profile, grid, runs, cval, out) -> bool:
    """Navier-Stokes rate study and remainder diagnostics; True if a gate failed."""
    nsc = cfg.ns

    def do_ns():
        rows, diag = [], []
        mu = profile(grid.y)[None, :]
        for eps in cfg.ns_eps:
            ecfg, _, comp, forcing = runs[eps]
            sol = solve_ns(ecfg, profile, comp, tol_ns=float(nsc["tol"]), max_iter=int(nsc["max_iter"]),
                           stabilization=float(nsc["stabilization"]))
            eu = float(np.abs(sol.u.values - mu).max())
            ev = float(np.abs(sol.v.values).max())
            rows.append((eps, eu, ev, (eu + ev) / (cval * eps) if cval > 0 else 0.0))
            _, recs, vals = remainder_diagnostics(sol, comp, forcing, ecfg)
            resc = gamma_rescale_error(sol, comp, eps, ecfg.gamma, ecfg.gamma / 2)
            diag.append((eps, vals, recs, resc, len(sol.trace) - 1))
        return rows, diag

    try:
        rows, diag = r.stage("ns", do_ns)
    except NSConvergenceError as exc:
        r.gate("ns.converged", False, str(exc))
        return True
    r.gate("ns.converged", True)
    errs = [a + b for _, a, b, _ in rows]
    slope = fit_slope(cfg.ns_eps, errs) if len(rows) > 1 else math.nan
    lines = ["epsilon,sup_err_u,sup_err_v,constant"] + [",".join(repr(float(v)) for v in row) for row in rows]
    lines.append(f"# slope: {slope!r}")
    (out / "rate_study.csv").write_text("\n".join(lines) + "\n")
    rem = ["epsilon,R1,R2,fg_l2_sq,E,P,X,X_constant,gamma_rescale_error,newton_steps"]
    for eps, vals, recs, resc, steps in diag:
        xc = next(x.ratio for x in recs if x.name == "remainder.X_inequality")
        rem.append(",".join(repr(float(v)) for v in (eps, vals["R1"], vals["R2"], vals["fg_l2_sq"], vals["E"],
                                                      vals["P"], vals["X"], xc, resc, steps)))
    (out / "remainder.csv").write_text("\n".join(rem) + "\n")
    failed = False
    if max(errs) <= 1e-10:
        r.gate("rate.slope", True, "errors vanish identically")
    elif len(rows) > 1:
        ok = slope >= float(cfg.verification["slope_min"])
        r.gate("rate.slope", ok, f"slope {slope:.4f}")
        failed |= not ok
    resc_ok = all(d[3] <= 1e-10 for d in diag)
    r.gate("remainder.gamma_rescale", resc_ok, f"max {max(d[3] for d in diag):.2e}")
    return failed or not resc_ok


def check_config(config_path) -> int:
    try:
        cfg = load_config(config_path)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"invalid: {exc}")
        return EXIT_ERROR
    print(json.dumps(cfg.echo(), indent=1, sort_keys=True))
    return EXIT_PASS


__all__ = ["RunConfig", "RunManifest", "ConfigError", "load_config", "run", "check_config"]
