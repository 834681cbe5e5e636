"""Deterministic SVG figures from a report directory."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .numerics import read_field_values  # noqa: E402

RC = {"svg.hashsalt": "shearlayer", "svg.fonttype": "none", "figure.figsize": (5.0, 3.6)}
META = {"Date": None, "Creator": None}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=META)
    plt.close(fig)


def _eps_dirs(report):
    return sorted((d for d in report.glob("eps_*") if d.is_dir()), key=lambda d: -float(d.name[4:]))



def plot_layer_profiles(d, out):
    path = d / "layer_profiles.csv"
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    names = lines[0].split(",")
    data = np.array([l.split(",") for l in lines[1:]], dtype=float)
    fig, ax = plt.subplots()
    for k, name in enumerate(names[1:], 1):
        ax.plot(data[:, 0], data[:, k], label=name)
    ax.set_xlabel("Y")
    ax.set_ylabel("u0")
    ax.legend(fontsize=7)
    _save(fig, out)


def plot_velocity_slice(d, out, frac=0.5):
    vals, _ = read_field_values(d / "u_s.csv")
    i = int(round(frac * (vals.shape[0] - 1)))
    y = np.linspace(0.0, 2.0, vals.shape[1])
    fig, ax = plt.subplots()
    ax.plot(vals[i], y)
    ax.set_xlabel("u_s")
    ax.set_ylabel("y")
    ax.set_title(f"u_s at x-index {i}")
    _save(fig, out)


def plot_heatmap(d, name, out):
    vals, _ = read_field_values(d / f"{name}.csv")
    fig, ax = plt.subplots()
    im = ax.imshow(vals.T, origin="lower", aspect="auto", cmap="RdBu_r", interpolation="nearest")
    fig.colorbar(im, ax=ax)
    ax.set_xlabel("i")
    ax.set_ylabel("j")
    ax.set_title(name)
    _save(fig, out)


def plot_rate(report, out):
    lines = (report / "rate_study.csv").read_text().splitlines()
    rows = np.array([l.split(",") for l in lines[1:] if not l.startswith("#")], dtype=float)
    slope = next((l.split(":", 1)[1].strip() for l in lines if l.startswith("# slope")), "nan")
    err = rows[:, 1] + rows[:, 2]
    fig, ax = plt.subplots()
    ax.loglog(rows[:, 0], np.where(err > 0, err, np.nan), "o-", label="sup error")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("max|u - mu| + max|v|")
    ax.annotate(f"slope {float(slope):.7f}", xy=(0.05, 0.9), xycoords="axes fraction")
    ax.legend()
    _save(fig, out)


def plot_report(report_dir, outdir=None):
    """Render every figure the report supports; returns (written paths, warnings)."""
    report = Path(report_dir)
    if not report.is_dir():
        raise FileNotFoundError(f"no such report directory: {report}")
    out = Path(outdir) if outdir else report / "figures"
    written, warnings = [], []
    dirs = _eps_dirs(report)
    if not dirs:
        warnings.append("no eps_* directories: layer, velocity and forcing plots skipped")
    with plt.rc_context(RC):
        for d in dirs:
            jobs = [("layer_profiles.csv", lambda p, d=d: plot_layer_profiles(d, p), "layers"),
                    ("u_s.csv", lambda p, d=d: plot_velocity_slice(d, p), "u_s_slice"),
                    ("T1.csv", lambda p, d=d: plot_heatmap(d, "T1", p), "T1"),
                    ("T2.csv", lambda p, d=d: plot_heatmap(d, "T2", p), "T2")]
            for src, fn, stem in jobs:
                if not (d / src).exists():
                    warnings.append(f"{d.name}/{src} missing")
                    continue
                out.mkdir(parents=True, exist_ok=True)
                path = out / f"{d.name}_{stem}.svg"
                fn(path)
                written.append(str(path))
        if (report / "rate_study.csv").exists():
            out.mkdir(parents=True, exist_ok=True)
            path = out / "rate_study.svg"
            plot_rate(report, path)
            written.append(str(path))
        else:
            warnings.append("rate_study.csv missing: rate plot skipped")
    return written, warnings
