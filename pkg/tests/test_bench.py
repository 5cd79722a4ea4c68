import numpy as np
import pytest

from srnstat.bench import (CSV_HEADER, SCHLOGL_UNIMODAL, TOGGLE_GUARANTEE, BenchmarkCase, ReferenceError,
                           compare_cell, compare_schemes, default_case, local_maxima, schlogl_reference,
                           toggle_network, toggle_reference, toggle_truncation, write_compare_csv)
from srnstat.errors import stationary_residual
from srnstat.model import load_model
from srnstat.scheme_bdp import BirthDeathSpec, bdp_stationary
from srnstat.statespace import interior_set


def test_schlogl_files_match_builtin_networks(models_dir, bimodal, unimodal):
    for name, net in (("schlogl_bimodal", bimodal), ("schlogl_unimodal", unimodal)):
        ref = bdp_stationary(BirthDeathSpec.from_network(load_model(models_dir / f"{name}.rxn")))
        here = bdp_stationary(BirthDeathSpec.from_network(net))
        np.testing.assert_allclose(ref.values[:800], here.values[:800], rtol=1e-12, atol=1e-300)


def test_toggle_file_matches_builtin_network(toggle):
    X = toggle_truncation(20 ** 6).states
    np.testing.assert_array_equal(toggle.propensities(X), toggle_network().propensities(X))


def test_schlogl_modes(bimodal_oracle, unimodal_oracle):
    assert local_maxima(unimodal_oracle.values).tolist() == [17]
    modes = local_maxima(bimodal_oracle.values)
    assert len(modes) == 2 and modes[0] < 40 < 300 < modes[1]


def test_local_maxima():
    assert local_maxima(np.array([1, 3, 2, 2, 5, 5, 1])).tolist() == [1, 4]


def test_reference_is_normalised_and_stationary(unimodal, unimodal_oracle):
    assert unimodal_oracle.mass == pytest.approx(1.0, abs=1e-15)
    assert stationary_residual(unimodal, unimodal_oracle, unimodal_oracle.states[:200], scaled=True) < 1e-12


def test_toggle_reference_guarantee():
    pair = toggle_reference()
    assert pair.meta["guarantee"] < TOGGLE_GUARANTEE
    ref = pair.meta["reference"]
    assert np.isclose(ref.mass, 1.0, atol=1e-6)
    net = toggle_network()
    inner = ref.truncation.states[interior_set(net, ref.truncation)]
    assert stationary_residual(net, pair.lower, inner) <= 1e-7
    assert toggle_reference() is pair  # cached
    with pytest.raises(ReferenceError):
        toggle_reference(r_ref=24 ** 6, require=1e-7)


def test_default_cases():
    case = default_case("schlogl-unimodal")
    assert case.schemes == ("ta-first", "ta-last", "bdp", "lp", "ita", "ilp")
    ref = schlogl_reference(SCHLOGL_UNIMODAL).values
    assert case.c > float(ref @ np.arange(ref.size))
    assert default_case("toggle").truncations[0] == 6 ** 6
    with pytest.raises(ValueError):
        default_case("nope")


def test_cross_scheme_equivalences():
    # on a birth-death chain, TA with re-entry at the top state, BDP and the LP point all give the conditional law
    case = default_case("schlogl-unimodal")
    rows = compare_schemes(case, schemes=("ta-last", "bdp", "lp", "ita"), truncations=(40,))
    l1 = {row.scheme: row.l1_scheme_error for row in rows}
    assert l1["ta-last"] == pytest.approx(l1["bdp"], abs=1e-10)
    assert l1["lp"] == pytest.approx(l1["bdp"], abs=1e-9)
    assert all(not row.error for row in rows)
    ita = rows[-1]
    assert ita.tv_lower_error >= ita.tail_mass
    assert ita.tv_upper_bracket_lo <= ita.tv_upper_bracket_hi


def test_cell_errors_are_recorded():
    case = default_case("schlogl-unimodal")
    row = compare_cell(case, "ita", 10)  # r below the moment bound
    assert row.error.startswith("ValueError")
    assert np.isnan(row.wall_ms)


def test_compare_csv_is_deterministic():
    case = default_case("schlogl-unimodal")
    a = compare_schemes(case, schemes=("ta-first", "bdp", "ita"), truncations=(30, 40))
    b = compare_schemes(case, threads=3, schemes=("ta-first", "bdp", "ita"), truncations=(30, 40))
    strip = lambda rows: [r.csv_fields()[:-1] for r in rows]  # wall time aside
    assert strip(a) == strip(b)
    text = write_compare_csv(a)
    lines = text.splitlines()
    assert lines[0].split(",") == list(CSV_HEADER)
    assert len(lines) == 7
    assert [ln.split(",")[:2] for ln in lines[1:3]] == [["ta-first", "30"], ["ta-first", "40"]]


def test_custom_case_runs():
    case = BenchmarkCase("schlogl-unimodal", SCHLOGL_UNIMODAL, "analytic-series", ("bdp",), (30,), 20.0)
    (row,) = compare_schemes(case)
    assert row.states == 30 and row.tail_bound == pytest.approx(20 / 30)
