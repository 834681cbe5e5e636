import json
import re
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from shearlayer.cli import main
from shearlayer.ns import fit_slope
from shearlayer.pipeline import ConfigError, load_config

CONFIGS = resources.files("shearlayer") / "configs"


def _config(tmp_path, text):
    path = tmp_path / "c.toml"
    path.write_text(text)
    return path


@pytest.fixture(scope="module")
def couette_report(tmp_path_factory):
    out = tmp_path_factory.mktemp("couette")
    code = main(["run", str(CONFIGS / "couette.toml"), "-o", str(out)])
    return code, out


@pytest.fixture(scope="module")
def bump_report(tmp_path_factory):
    out = tmp_path_factory.mktemp("bump")
    code = main(["run", str(CONFIGS / "bump.toml"), "-o", str(out)])
    return code, out


def test_couette_run_passes(couette_report):
    code, out = couette_report
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert all(g["passed"] for g in manifest["gates"].values())
    rows = (out / "rate_study.csv").read_text().splitlines()[1:-1]
    assert all(float(r.split(",")[1]) == 0.0 and float(r.split(",")[2]) == 0.0 for r in rows)
    for line in (out / "estimates.csv").read_text().splitlines()[1:]:
        name, lhs = line.split(",")[:2]
        if not name.startswith("T2.wall") and "stability" not in name:
            assert float(lhs) == 0.0, line


def test_manifest_lists_every_file(couette_report):
    _, out = couette_report
    manifest = json.loads((out / "manifest.json").read_text())
    files = {str(p.relative_to(out)) for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"}
    assert set(manifest["files"]) == files
    assert all(s["status"] == "ok" for s in manifest["stages"].values())


def test_invalid_profile_stops_at_validate(tmp_path):
    out = tmp_path / "out"
    code = main(["run", str(CONFIGS / "invalid_y2.toml"), "-o", str(out)])
    assert code == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert list(manifest["stages"]) == ["validate"]
    assert not manifest["gates"]["profile.validate"]["passed"]


def test_bump_run_reports(bump_report):
    code, out = bump_report
    manifest = json.loads((out / "manifest.json").read_text())
    gates_ok = all(g["passed"] for g in manifest["gates"].values())
    # exit status mirrors the gates; the slope gate is what decides this run
    assert code == (0 if gates_ok else 1)
    rows = [l for l in (out / "rate_study.csv").read_text().splitlines()[1:] if not l.startswith("#")]
    assert len(rows) == 3
    assert "rate.slope" in manifest["gates"]


def test_runs_are_deterministic(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        main(["run", str(CONFIGS / "couette.toml"), "-o", str(out)])
        outs.append(out)
    csvs = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
    assert csvs
    for rel in csvs:
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel


def test_thread_count_does_not_change_results(tmp_path, monkeypatch):
    outs = []
    for threads in ("1", "3"):
        monkeypatch.setenv("SHEARLAYER_THREADS", threads)
        out = tmp_path / f"t{threads}"
        main(["run", str(CONFIGS / "couette.toml"), "-o", str(out)])
        outs.append(out)
    for p in outs[0].rglob("*.csv"):
        assert p.read_bytes() == (outs[1] / p.relative_to(outs[0])).read_bytes()


def test_check_config(capsys):
    assert main(["check-config", str(CONFIGS / "bump.toml")]) == 0
    echo = json.loads(capsys.readouterr().out)
    assert echo["expansion"]["eps"] == [0.01, 0.005, 0.0025]


def test_parse_error_reports_line(tmp_path, capsys):
    path = _config(tmp_path, "[profile]\nname = \n")
    assert main(["check-config", str(path)]) == 2
    assert "line 2" in capsys.readouterr().out


@pytest.mark.parametrize("text", [
    "[expansion]\neps = [5e-3, 1e-2]\n",
    "[expansion]\neps = []\n",
    "[grid]\nnx = 4\n",
    "[mystery]\nx = 1\n",
    "[profile]\ncolour = 1\n",
])
def test_config_rejections(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_config(tmp_path, text))


def test_run_with_bad_config_exits_2(tmp_path):
    assert main(["run", str(_config(tmp_path, "[grid]\nnx = 4\n")), "-o", str(tmp_path / "o")]) == 2


def test_plot_empty_dir(tmp_path, capsys):
    assert main(["plot", str(tmp_path)]) == 0
    err = capsys.readouterr().err
    assert "warning" in err
    assert not any(tmp_path.rglob("*.svg"))


def test_plot_couette_flat_and_finite(couette_report, tmp_path):
    _, out = couette_report
    figs = tmp_path / "figs"
    assert main(["plot", str(out), "-o", str(figs)]) == 0
    svgs = sorted(figs.glob("*.svg"))
    assert svgs
    for p in svgs:
        text = p.read_text()
        assert "nan" not in text.lower().replace("nanometre", "")
        assert "<dc:date>" not in text


def test_plot_deterministic(couette_report, tmp_path):
    _, out = couette_report
    for k in range(2):
        main(["plot", str(out), "-o", str(tmp_path / f"f{k}")])
    for p in (tmp_path / "f0").glob("*.svg"):
        assert p.read_bytes() == (tmp_path / "f1" / p.name).read_bytes()


def test_rate_plot_annotation_matches_csv(bump_report, tmp_path):
    _, out = bump_report
    main(["plot", str(out), "-o", str(tmp_path)])
    lines = (out / "rate_study.csv").read_text().splitlines()
    rows = np.array([l.split(",") for l in lines[1:] if not l.startswith("#")], dtype=float)
    slope = fit_slope(rows[:, 0], rows[:, 1] + rows[:, 2])
    text = (tmp_path / "rate_study.svg").read_text()
    m = re.search(r"slope (-?[0-9.]+)", text)
    assert m and abs(float(m.group(1)) - slope) <= 1e-6
