import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srnstat.distribution import interval_truncation
from srnstat.model import parse_model
from srnstat.scheme_bdp import BirthDeathSpec, bdp_conditional
from srnstat.scheme_ta import (BoundaryMid, ConditionalSeries, Custom, FixedState, TASolveError, Uniform,
                              boundary_mid_state, build_augmented, conditional_reentry_approx, parse_reentry,
                              ta_diagnostics, ta_solve)
from srnstat.statespace import Truncation, build_sublevel_truncation, in_boundary


def _check_contract(sys, pi):
    assert pi.mass == pytest.approx(1.0, abs=1e-10)
    scale = max(1.0, float(np.abs(sys.Q.diagonal()).max()))
    assert np.abs(sys.Q.T @ pi.values).max() <= 1e-8 * scale


def test_augmented_generator_is_conservative(toggle):
    T = build_sublevel_truncation(toggle, "(S1+S2)^6", 10 ** 6)
    for spec in (FixedState((0, 9)), Uniform(), BoundaryMid()):
        sys = build_augmented(toggle, T, spec)
        np.testing.assert_allclose(np.asarray(sys.Q.sum(axis=1)).ravel(), 0.0, atol=1e-12)


@pytest.mark.parametrize("method", ["auto", "accurate", "inverse-row", "replaced-equation"])
def test_residual_contract_toggle(toggle, method):
    T = build_sublevel_truncation(toggle, "(S1+S2)^6", 20 ** 6)
    sys = build_augmented(toggle, T, FixedState((3, 16)))
    _check_contract(sys, ta_solve(sys, method=method))


def test_last_state_reentry_is_conditional_law(bimodal):
    r = 600
    T = interval_truncation(r)
    pi = ta_solve(build_augmented(bimodal, T, FixedState((r - 1,))))
    ref = bdp_conditional(BirthDeathSpec.from_network(bimodal), r)
    assert np.abs(pi.values - ref.values).sum() < 1e-12


def test_conditional_series_exact_for_bdp(unimodal):
    T = interval_truncation(30)
    ref = bdp_conditional(BirthDeathSpec.from_network(unimodal), 30).values
    for depth in (0, 3):
        pi = ta_solve(build_augmented(unimodal, T, ConditionalSeries(depth)))
        assert np.abs(pi.values - ref).sum() < 1e-12


def test_conditional_series_converges_on_toggle(toggle):
    # the exact re-entry law makes TA the conditional distribution on T
    T = build_sublevel_truncation(toggle, "S1+S2", 25)
    big = build_sublevel_truncation(toggle, "S1+S2", 90)
    exact = ta_solve(build_augmented(toggle, big, BoundaryMid()))
    cond = exact.at(T.states)
    cond = cond / cond.sum()
    errs = [np.abs(ta_solve(build_augmented(toggle, T, ConditionalSeries(N))).values - cond).sum() for N in (0, 16, 64)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3


def test_conditional_reentry_rows_are_distributions(toggle):
    T = build_sublevel_truncation(toggle, "S1+S2", 6)
    spec = conditional_reentry_approx(toggle, T, 4)
    assert isinstance(spec, Custom)
    for row in spec.rows.values():
        assert np.asarray(row).sum() == pytest.approx(1.0)
        assert (np.asarray(row) >= 0).all()


def test_reentry_parsing():
    assert parse_reentry("state:1,2") == FixedState((1, 2))
    assert parse_reentry("uniform") == Uniform()
    assert parse_reentry("boundary-mid") == BoundaryMid()
    assert parse_reentry("conditional:3") == ConditionalSeries(3)
    for bad in ("nope", "conditional:-1", "state:a"):
        with pytest.raises(ValueError):
            parse_reentry(bad)


def test_boundary_mid_is_in_boundary(toggle):
    T = build_sublevel_truncation(toggle, "(S1+S2)^6", 12 ** 6)
    z = boundary_mid_state(toggle, T)
    B = in_boundary(toggle, T)
    assert z == B[len(B) // 2]


def test_custom_rows_validated(toggle):
    T = build_sublevel_truncation(toggle, "S1+S2", 3)
    with pytest.raises(ValueError):
        build_augmented(toggle, T, Custom({}))
    n = len(T)
    bad = {int(i): np.full(n, 0.5) for i in range(n)}
    with pytest.raises(ValueError):
        build_augmented(toggle, T, Custom(bad))
    good = {int(i): np.full(n, 1.0 / n) for i in range(n)}
    sys = build_augmented(toggle, T, Custom(good))
    _check_contract(sys, ta_solve(sys))


def test_unknown_method(toggle):
    T = build_sublevel_truncation(toggle, "S1+S2", 3)
    with pytest.raises(ValueError):
        ta_solve(build_augmented(toggle, T, Uniform()), method="magic")


def test_leaking_class_becomes_transient(parity):
    # odd S1 counts leak out and re-enter at an even state, so the odd class carries no mass
    T = build_sublevel_truncation(parity, "S1+S2", 8)
    pi = ta_solve(build_augmented(parity, T, FixedState((0, 0))))
    odd = T.states[:, 0] % 2 == 1
    assert pi.values[odd].max() == 0.0
    assert pi.mass == pytest.approx(1.0)


def test_two_closed_classes_are_reported(parity):
    # re-entry that preserves parity leaves two closed classes: no unique solution
    T = build_sublevel_truncation(parity, "S1+S2", 8)
    n = len(T)
    rows = {}
    for i in range(n):
        row = np.zeros(n)
        row[T.index_of((T.state(i)[0] % 2, 0))] = 1.0
        rows[i] = row
    sys = build_augmented(parity, T, Custom(rows))
    with pytest.raises(TASolveError) as info:
        ta_solve(sys)
    assert info.value.diagnostics["n_closed"] == 2


def test_absorbing_chain_concentrates(models_dir):
    from srnstat.model import load_model

    net = load_model(models_dir / "three_state.rxn")
    T = Truncation.from_states([(1,), (2,), (3,)])
    pi = ta_solve(build_augmented(net, T, Uniform()))
    np.testing.assert_allclose(pi.values, [1, 0, 0], atol=1e-14)


def test_diagnostics(toggle):
    T = build_sublevel_truncation(toggle, "(S1+S2)^6", 12 ** 6)
    sys = build_augmented(toggle, T, FixedState((0, 11)))
    pi = ta_solve(sys)
    d = ta_diagnostics(sys, pi, v="S1+S2")
    assert d["outflow"] == pytest.approx(float(pi.values @ sys.out_rate))
    assert d["convergence_factor"] == pytest.approx((11 + 11) * d["outflow"])
    assert d["outflow_rigor"] == "heuristic"


_rates = st.floats(0.5, 30)


@given(_rates, _rates, st.floats(0.2, 3), st.floats(0.2, 3), st.integers(4, 14), st.integers(0, 10 ** 6))
@settings(max_examples=20, deadline=None)
def test_fast_and_general_paths_agree(a1, a2, g1, g2, r, seed):
    net = parse_model("species A B\n"
                      f"reaction 0 -> A : {a1!r} / (1 + B)\nreaction A -> 0 : mass_action({g1!r})\n"
                      f"reaction 0 -> B : {a2!r} / (1 + A)\nreaction B -> 0 : mass_action({g2!r})")
    T = build_sublevel_truncation(net, "A+B", r)
    B = in_boundary(net, T)
    z = T.state(B[np.random.default_rng(seed).integers(B.size)])
    sys = build_augmented(net, T, FixedState(z))
    fast = ta_solve(sys, method="inverse-row")
    general = ta_solve(sys, method="replaced-equation")
    accurate = ta_solve(sys, method="accurate")
    assert np.abs(fast.values - general.values).sum() <= 1e-9
    assert np.abs(accurate.values - general.values).sum() <= 1e-9
    _check_contract(sys, fast)
