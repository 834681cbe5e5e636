import math

import numpy as np
import pytest

from shearlayer.estimates import gamma_rescale_error, remainder_diagnostics
from shearlayer.forcing import CompositeFlow, ExpansionConfig, assemble_composite, assemble_forcing, build_layers
from shearlayer.numerics import Field2D, PhysicalGrid
from shearlayer.ns import (
    NSConvergenceError,
    RateStudy,
    divergence_max,
    fit_slope,
    newton_tail_constant,
    rate_study,
    solve_ns,
)

L = 0.5


def _composite(profile, n, eps):
    cfg = ExpansionConfig(eps)
    comp = assemble_composite(cfg, build_layers(profile, PhysicalGrid(L, n, n), eps))
    return cfg, comp


@pytest.fixture(scope="module")
def couette_solution(couette):
    cfg, comp = _composite(couette, 32, 1e-2)
    return cfg, comp, solve_ns(cfg, couette, comp)


@pytest.fixture(scope="module")
def bump_solution(bump):
    cfg, comp = _composite(bump, 64, 1e-2)
    return cfg, comp, solve_ns(cfg, bump, comp)


@pytest.mark.parametrize("eps", [1e-2, 1e-3])
def test_couette_exact(couette, eps):
    cfg, comp = _composite(couette, 32, eps)
    sol = solve_ns(cfg, couette, comp)
    Y = comp.grid.mesh()[1]
    assert len(sol.trace) - 1 <= 2
    assert np.abs(sol.u.values - Y).max() <= 1e-10
    assert np.abs(sol.v.values).max() <= 1e-10


def _mms(n, eps=0.1):
    g = PhysicalGrid(L, n, n)
    X, Y = g.mesh()
    u = Y + 0.1 * np.sin(2 * X) * np.sin(Y)
    v = 0.2 * np.cos(2 * X) * np.cos(Y)
    P = 0.05 * np.cos(X) * np.sin(Y)
    ux, uy = 0.2 * np.cos(2 * X) * np.sin(Y), 1 + 0.1 * np.sin(2 * X) * np.cos(Y)
    vx, vy = -0.4 * np.sin(2 * X) * np.cos(Y), -0.2 * np.cos(2 * X) * np.sin(Y)
    lap_u = -0.5 * np.sin(2 * X) * np.sin(Y)
    lap_v = -1.0 * np.cos(2 * X) * np.cos(Y)
    Px, Py = -0.05 * np.sin(X) * np.sin(Y), 0.05 * np.cos(X) * np.cos(Y)
    fu = u * ux + v * uy + Px - eps * lap_u
    fv = u * vx + v * vy + Py - eps * lap_v
    fc = np.zeros_like(u)
    ref = CompositeFlow(Field2D(g, u), Field2D(g, v), Field2D(g, P), eps)
    return ref, (fu, fv, fc)


def test_manufactured_solution_second_order(couette):
    errs = []
    for n in (16, 32, 64):
        ref, force = _mms(n)
        sol = solve_ns(0.1, couette, ref, body_force=force, wall_values="reference",
                       initial=(np.broadcast_to(ref.grid.y, ref.grid.shape), np.zeros(ref.grid.shape),
                                np.zeros(ref.grid.shape)))
        errs.append(max(np.abs(sol.u.values - ref.u_s.values).max(),
                        np.abs(sol.v.values - ref.v_s.values).max()))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8), (errs, orders)


def test_bump_converges_with_small_divergence(bump_solution):
    cfg, comp, sol = bump_solution
    assert sol.converged and sol.trace[-1] <= 1e-10
    # the pressure stabilization perturbs continuity at O(h^2)
    assert divergence_max(sol) <= 10 * comp.grid.hx**2


def test_independent_of_initial_guess(bump, bump_solution):
    cfg, comp, sol = bump_solution
    Y = comp.grid.mesh()[1]
    guess = (bump(comp.grid.y)[None, :] + 0.01 * np.sin(np.pi * Y / 2), np.zeros_like(Y), np.zeros_like(Y))
    other = solve_ns(cfg, bump, comp, initial=guess)
    assert np.abs(other.u.values - sol.u.values).max() <= 1e-9
    assert np.abs(other.v.values - sol.v.values).max() <= 1e-9


def test_newton_quadratic_tail(bump, bump_solution):
    cfg, comp, _ = bump_solution
    Y = comp.grid.mesh()[1]
    guess = (bump(comp.grid.y)[None, :] + 0.05 * np.sin(np.pi * Y / 2), np.zeros_like(Y), np.zeros_like(Y))
    sol = solve_ns(cfg, bump, comp, initial=guess)
    assert len(sol.trace) >= 3
    assert newton_tail_constant(sol.trace) < 1e3


def test_eps_floor(couette):
    _, comp = _composite(couette, 16, 1e-2)
    with pytest.raises(ValueError):
        solve_ns(5e-5, couette, comp)


def test_iteration_cap(bump, bump_solution):
    cfg, comp, _ = bump_solution
    with pytest.raises(NSConvergenceError) as err:
        solve_ns(cfg, bump, comp, max_iter=0)
    assert len(err.value.trace) == 1


def test_rate_study_couette(couette, tmp_path):
    with pytest.warns(UserWarning, match="does not resolve"):
        rs = rate_study(couette, ExpansionConfig(1e-2), [1e-2, 5e-3], PhysicalGrid(L, 32, 32))
    assert all(eu <= 1e-12 and ev <= 1e-12 for _, eu, ev, _ in rs.entries)
    rs.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "epsilon,sup_err_u,sup_err_v,constant" and lines[-1].startswith("# slope:")


def test_rate_study_rejects_unsorted(couette):
    with pytest.raises(ValueError):
        rate_study(couette, ExpansionConfig(1e-2), [5e-3, 1e-2], PhysicalGrid(L, 16, 16))


def test_fit_slope_exact_power():
    eps = np.array([1e-2, 5e-3, 2.5e-3])
    assert fit_slope(eps, 3 * eps**1.25) == pytest.approx(1.25, abs=1e-12)
    assert fit_slope(eps, np.zeros(3)) == 0.0


def test_remainder_couette_zero(couette_solution):
    cfg, comp, sol = couette_solution
    norms, records, values = remainder_diagnostics(sol, comp, assemble_forcing(cfg, comp), cfg)
    assert max(abs(values[k]) for k in ("R1", "R2", "fg_l2_sq", "E", "P", "X")) <= 1e-6
    assert all(math.isfinite(r.ratio) for r in records)


def test_remainder_bump_finite(bump_solution):
    cfg, comp, sol = bump_solution
    _, records, values = remainder_diagnostics(sol, comp, assemble_forcing(cfg, comp), cfg)
    assert all(math.isfinite(v) for k, v in values.items() if k != "degenerate")
    assert all(math.isfinite(r.ratio) for r in records)


def test_gamma_rescaling(bump_solution):
    cfg, comp, sol = bump_solution
    assert gamma_rescale_error(sol, comp, cfg.eps, 0.05, 0.01) <= 1e-10


def test_rate_study_entries_type():
    rs = RateStudy("x", [(1e-2, 1.0, 1.0, 1.0)], 1.0)
    assert rs.entries[0][0] == 1e-2
