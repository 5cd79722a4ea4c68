import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srnstat.model import parse_model
from srnstat.statespace import (LevelError, StateCapExceeded, Truncation, apply_generator, build_sublevel_truncation,
                                build_superlevel_truncation, communicating_classes, detect_levels, in_boundary,
                                interior_set, jumps, level_cutoff, out_boundary)


def test_sublevel_matches_brute_force(toggle):
    T = build_sublevel_truncation(toggle, "(S1+S2)^6", 12 ** 6)
    brute = [(a, b) for a in range(13) for b in range(13) if (a + b) ** 6 < 12 ** 6]
    assert sorted(map(tuple, T.states.tolist())) == sorted(brute)
    assert len(T) == 78


def test_truncation_sorted_and_lookup():
    T = Truncation.from_states([(2, 0), (0, 1), (0, 0), (1, 5)])
    assert T.states.tolist() == [[0, 0], [0, 1], [1, 5], [2, 0]]
    assert T.lookup(np.array([[1, 5], [9, 9], [0, 1]])).tolist() == [2, -1, 1]
    assert (1, 5) in T and (5, 1) not in T
    with pytest.raises(KeyError):
        T.index_of((3, 3))


def test_truncation_rejects_bad_input():
    with pytest.raises(ValueError):
        Truncation.from_states([(0,), (0,)])
    with pytest.raises(ValueError):
        Truncation.from_states([(-1,)])


def test_sparse_lookup_path():
    T = Truncation.from_states([(0, 0), (10 ** 5, 10 ** 5)])
    assert T._lookup[0] == "dict"
    assert T.lookup(np.array([[10 ** 5, 10 ** 5], [1, 1]])).tolist() == [1, -1]


def test_boundaries_toggle(toggle):
    T = build_sublevel_truncation(toggle, "S1+S2", 5)
    outs, qo = out_boundary(toggle, T)
    # only the top layer x1 + x2 = 4 leaks, at total birth rate
    for k in outs:
        assert sum(T.state(k)) == 4
    x = T.index_of((1, 3))
    assert qo[x] == pytest.approx(20 / 4 + 20 / 2)
    inb = in_boundary(toggle, T)
    assert {T.state(k) for k in inb} == {s for s in map(tuple, T.states.tolist()) if sum(s) == 4}


def test_sublevel_state_cap(toggle):
    with pytest.raises(StateCapExceeded):
        build_sublevel_truncation(toggle, "S1+S2", 1000, cap=100)


def test_superlevel_truncation(unimodal):
    T = build_superlevel_truncation(unimodal, "S", 10.0, qu_max=60.0)
    Qu = apply_generator(unimodal, "S", T.states)
    assert (Qu > -600).all()
    assert T.tail_bound == pytest.approx(1 / 11)
    with pytest.raises(ValueError):
        build_superlevel_truncation(unimodal, "S", 10.0, qu_max=0.0)


def test_levels_and_block_tridiagonal(toggle):
    from srnstat.numlin import assemble_Qr

    T = build_sublevel_truncation(toggle, "(S1+S2)^6", 10 ** 6)
    L = detect_levels(toggle, T, "S1+S2")
    assert len(L.levels) == 10
    Q = assemble_Qr(toggle, T).tocoo()
    assert np.abs(L.level_of[Q.row] - L.level_of[Q.col]).max() <= 1


def test_levels_reject_skips():
    net = parse_model("species A\nreaction 0 -> 2 A : 1\nreaction A -> 0 : A")
    T = build_sublevel_truncation(net, "A", 6)
    with pytest.raises(LevelError):
        detect_levels(net, T, "A")


def test_level_cutoff():
    assert level_cutoff(238 ** 6) == 238
    assert level_cutoff(238 ** 6 - 1) == 237
    assert level_cutoff(64, power=6) == 2


def test_parity_has_two_closed_classes(parity):
    T = build_sublevel_truncation(parity, "S1+S2", 10)
    cd = communicating_classes(parity, T)
    assert len(cd.closed_classes) == 2
    parities = [{T.state(k)[0] % 2 for k in c} for c in cd.closed_classes]
    assert sorted(map(tuple, parities)) == [(0,), (1,)]
    assert cd.truncation_relative


def test_three_state_absorbing(models_dir):
    from srnstat.model import load_model

    net = load_model(models_dir / "three_state.rxn")
    T = Truncation.from_states([(1,), (2,), (3,)])
    cd = communicating_classes(net, T)
    assert [[T.state(k) for k in c] for c in cd.closed_classes] == [[(1,)]]
    assert len(cd.transient) == 2


_nets = st.sampled_from([
    "species A B\nreaction 0 -> A : 1\nreaction A -> B : A\nreaction B -> 0 : B",
    "species A B\nreaction 0 -> 2 A : 1\nreaction A + B -> 0 : mass_action(1)\nreaction 0 -> B : 2",
    "species A\nreaction 0 -> 3 A : 1\nreaction A -> 0 : A",
])


@given(_nets, st.integers(2, 9))
@settings(max_examples=40, deadline=None)
def test_interior_boundary_partition(text, r):
    net = parse_model(text)
    T = build_sublevel_truncation(net, "+".join(net.species), r)
    inner, inb = interior_set(net, T), in_boundary(net, T)
    assert np.intersect1d(inner, inb).size == 0
    assert np.union1d(inner, inb).tolist() == list(range(len(T)))
    # brute force: x is in the in-boundary iff some y outside T jumps to x
    A_all = {}
    for k in range(len(T)):
        x = np.array(T.state(k))
        hit = False
        for j in range(net.n_reactions):
            y = x - net.nu[j]
            if (y < 0).any() or tuple(y) in T:
                continue
            if net.propensities(y[None, :])[0, j] > 0:
                hit = True
        A_all[k] = hit
    assert sorted(k for k, h in A_all.items() if h) == inb.tolist()


@given(_nets, st.integers(2, 9))
@settings(max_examples=40, deadline=None)
def test_jump_rates_conserve(text, r):
    net = parse_model(text)
    T = build_sublevel_truncation(net, "+".join(net.species), r)
    J = jumps(net, T)
    inside = np.where(J.target >= 0, J.A, 0.0).sum(axis=1)
    np.testing.assert_allclose(inside + J.out_rate, J.exit_rate)
    assert (J.out_rate >= 0).all()


def test_toggle_sublevel_counts(toggle):
    for k in range(1, 31):
        T = build_sublevel_truncation(toggle, "(S1+S2)^6", k ** 6)
        assert len(T) == k * (k + 1) // 2


@given(st.integers(0, 10 ** 6))
@settings(max_examples=30, deadline=None)
def test_classes_stable_under_extra_edge_inside_class(seed):
    from scipy.sparse.csgraph import connected_components

    from srnstat import statespace

    net = parse_model("species A B\nreaction 0 -> 2 A : 1\nreaction 2 A -> 0 : mass_action(1)\n"
                      "reaction 0 -> B : 1\nreaction B -> 0 : B")
    T = build_sublevel_truncation(net, "A+B", 8)
    base = communicating_classes(net, T)
    G = statespace.transition_graph(net, T).tolil()
    rng = np.random.default_rng(seed)
    cls = base.closed_classes[rng.integers(len(base.closed_classes))]
    i, j = rng.choice(cls, 2, replace=len(cls) < 2)
    G[i, j] = 1.0
    _, label = connected_components(G.tocsr(), directed=True, connection="strong")
    for c in base.closed_classes:
        assert np.unique(label[c]).size == 1
    assert sorted(map(len, base.closed_classes)) == sorted(
        np.bincount(label)[np.unique(label[np.concatenate(base.closed_classes)])].tolist())
