import mpmath
import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from shearlayer.profile import ProfileError, c0, make_profile, validate, ytilde


def test_couette_validates_for_any_n0():
    for n0 in (2, 5, 9):
        rec = validate(make_profile("couette", n0=n0))
        assert rec.passed, rec.failures()


def test_y_squared_fails_slope():
    rec = validate(make_profile("expr", expr="y**2", ub=4.0))
    assert not rec.passed
    assert "mu'(0)>0" in rec.failures()


def test_bump_vanishing_orders_match_symbolic():
    prof = make_profile("couette_plus_bump", alpha=0.1, n0=5)
    rec = validate(prof)
    assert rec.passed
    y = sp.Symbol("y")
    mu = y + sp.Rational(1, 10) * (y * (2 - y)) ** 6
    for j in range(2, 6):
        for wall in (0, 2):
            assert sp.diff(mu, y, j).subs(y, wall) == 0
            assert rec.checks[f"d{j}mu({wall})=0"][0]
    # the sixth derivative does not vanish, so n0 = 6 must fail
    asserted_six = make_profile("expr", expr="y + (y*(2 - y))**6/10", n0=6)
    assert validate(asserted_six).failures() == ["d6mu(0)=0", "d6mu(2)=0"]


def test_c0_couette_zero():
    assert c0(make_profile("couette")) == 0.0


def test_c0_linear_in_alpha():
    a = c0(make_profile(alpha=0.1))
    b = c0(make_profile(alpha=0.2))
    assert b / a == pytest.approx(2.0, abs=1e-6)


def test_c0_sine_bump_against_high_precision_oracle():
    prof = make_profile("sine_bump", alpha=0.1, n0=5)
    assert validate(prof).passed
    y = sp.Symbol("y")
    mu = y + sp.Rational(1, 10) * sp.sin(sp.pi * y / 2) ** 6
    q3 = sp.diff(mu, y, 3) / mu
    fns = [sp.lambdify(y, sp.diff(q3, y, k), "mpmath") for k in range(4)]
    mpmath.mp.dps = 30
    ys = np.linspace(0.0, 2.0, 2001)[5:-5:4]
    oracle = max(sum(abs(f(mpmath.mpf(float(v)))) for f in fns) for v in ys)
    val = c0(prof)
    assert np.isfinite(val) and val > 0
    assert val == pytest.approx(float(oracle), rel=1e-2)


def test_unbounded_ratio_raises():
    # mu''' / mu blows up at y = 0 when mu vanishes but mu''' does not
    with pytest.raises(ProfileError):
        c0(make_profile("expr", expr="y + y**3/6 - y**3/6*(y/2)", ub=2.0, n0=2))


def test_unknown_profile():
    with pytest.raises(ProfileError):
        make_profile("nope")


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 0.4))
def test_bump_wall_values(alpha):
    prof = make_profile(alpha=alpha)
    assert prof(np.array([0.0]))[0] == pytest.approx(0.0, abs=1e-14)
    assert prof(np.array([2.0]))[0] == pytest.approx(2.0, abs=1e-14)
    assert validate(prof).passed


def test_ytilde():
    assert np.allclose(ytilde(np.array([0.0, 1.0, 2.0])), [0.0, 1.0, 0.0])
