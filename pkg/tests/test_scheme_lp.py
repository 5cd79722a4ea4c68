import numpy as np
import pytest

from srnstat.distribution import interval_truncation
from srnstat.scheme_bdp import BirthDeathSpec, bdp_conditional
from srnstat.scheme_lp import (PolytopeError, build_polytope, ilp_bounds, ilp_marginal_bounds, ilp_statewise_bounds,
                               lp_approximate, lp_ergodic_probe)
from srnstat.statespace import build_sublevel_truncation


def _mean(oracle):
    return float(oracle.values @ np.arange(oracle.values.size))


@pytest.fixture(scope="module")
def uni_c(unimodal_oracle):
    return _mean(unimodal_oracle) * (1 + 1e-6)


def test_polytope_shape(unimodal, uni_c):
    poly = build_polytope(unimodal, interval_truncation(40), "S", uni_c)
    assert poly.n_equalities == 39  # every state but the top one is interior
    assert poly.form == "cut"
    assert poly.lp.A.shape == (39 + 3, 40)


@pytest.mark.parametrize("form", ["cut", "balance"])
def test_oracle_restriction_is_feasible(unimodal, unimodal_oracle, uni_c, form):
    for r in (30, 40, 60):
        poly = build_polytope(unimodal, interval_truncation(r), "S", uni_c, form=form)
        pi = np.zeros(r)
        m = min(r, unimodal_oracle.values.size)
        pi[:m] = unimodal_oracle.values[:m]
        assert poly.violation(pi) <= 1e-9
        cond = bdp_conditional(BirthDeathSpec.from_network(unimodal), r).values
        assert poly.violation(cond) <= 1e-9


def test_mass_optimum_is_conditional_law(unimodal, uni_c):
    r = 50
    ref = bdp_conditional(BirthDeathSpec.from_network(unimodal), r).values
    for form in ("cut", "balance"):
        pi = lp_approximate(build_polytope(unimodal, interval_truncation(r), "S", uni_c, form=form))
        assert np.abs(pi.values - ref).sum() <= 1e-9


def test_polytope_needs_r_above_c(unimodal):
    with pytest.raises(PolytopeError):
        build_polytope(unimodal, interval_truncation(10), "S", 20.0)
    with pytest.raises(ValueError):
        build_polytope(unimodal, interval_truncation(30), "S", 20.0, form="other")


def test_ilp_brackets_oracle_and_lp_point(unimodal, unimodal_oracle, uni_c):
    r = 40
    poly = build_polytope(unimodal, interval_truncation(r), "S", uni_c)
    pair, rep = ilp_statewise_bounds(poly)
    pi = unimodal_oracle.values[:r]
    lp = lp_approximate(poly).values
    assert (pair.lower.values <= pi + 1e-10).all() and (pi <= pair.upper.values + 1e-10).all()
    assert (pair.lower.values <= lp + 1e-9).all() and (lp <= pair.upper.values + 1e-9).all()
    assert rep.unique_certificate
    assert not rep.failures


def test_ilp_monotone_in_r(unimodal, uni_c):
    # nested truncations shrink the polytope: lower bounds rise, upper bounds fall
    f = (np.arange(50) == 17).astype(float)
    prev = None
    for r in (50, 100, 200):
        poly = build_polytope(unimodal, interval_truncation(r), "S", uni_c)
        obj = np.zeros(r)
        obj[:50] = f
        rep = ilp_bounds(poly, [obj, np.arange(r) < 20])
        if prev is not None:
            assert (rep.lower >= prev.lower - 1e-9).all()
            assert (rep.upper <= prev.upper + 1e-9).all()
        prev = rep


def test_threads_give_same_bounds(unimodal, uni_c):
    poly = build_polytope(unimodal, interval_truncation(30), "S", uni_c)
    a, _ = ilp_statewise_bounds(poly, threads=1)
    b, _ = ilp_statewise_bounds(poly, threads=3)
    np.testing.assert_allclose(a.lower.values, b.lower.values, atol=1e-12)
    np.testing.assert_allclose(a.upper.values, b.upper.values, atol=1e-12)


def test_marginal_bounds_toggle(toggle):
    T = build_sublevel_truncation(toggle, "(S1+S2)^6", 20 ** 6)
    poly = build_polytope(toggle, T, "(S1+S2)^6", 1.8e7)
    assert poly.form == "balance" and poly.cut is not None
    mb, rep = ilp_marginal_bounds(poly, 0)
    assert (mb.lower <= mb.upper + 1e-12).all()
    assert mb.indices.tolist() == list(range(20))
    pi = lp_approximate(poly)
    marg = np.bincount(T.states[:, 0], weights=pi.values)
    assert (mb.lower <= marg + 1e-9).all() and (marg <= mb.upper + 1e-9).all()


def test_ergodic_probe_on_parity(parity):
    # both parity classes satisfy the interior balance equations, so either can be probed
    T = build_sublevel_truncation(parity, "S1+S2", 12)
    poly = build_polytope(parity, T, "S1+S2", 6.0, r=12)
    res = lp_ergodic_probe(poly, (1, 0))
    assert res.distribution.values[T.index_of((1, 0))] > 0
    assert all(s[0] % 2 == 1 for s in res.support)
