import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import csr_matrix

from srnstat.distribution import interval_truncation
from srnstat.numlin import (DENSE_CUTOFF, SingularMatrixError, assemble_Qr, bandwidth, lu_factor, mmatrix_lu,
                            scale_factors, solve)
from srnstat.statespace import build_sublevel_truncation, jumps


def test_qr_row_sums_are_minus_outflow(toggle):
    T = build_sublevel_truncation(toggle, "(S1+S2)^6", 8 ** 6)
    Q = assemble_Qr(toggle, T)
    np.testing.assert_allclose(np.asarray(Q.sum(axis=1)).ravel(), -jumps(toggle, T).out_rate, atol=1e-12)
    off = Q.toarray() - np.diag(Q.diagonal())
    assert (off >= 0).all()


def test_scale_factors(toggle):
    T = build_sublevel_truncation(toggle, "S1+S2", 4)
    s = scale_factors(toggle, T)
    assert (s >= 1).all()
    assert s[T.index_of((0, 0))] == pytest.approx(40.0)


@pytest.mark.parametrize("n", [5, DENSE_CUTOFF + 20])
def test_lu_solves_match_numpy(n):
    rng = np.random.default_rng(n)
    A = rng.standard_normal((n, n)) + n * np.eye(n)
    b = rng.standard_normal((n, 3))
    F = lu_factor(csr_matrix(A))
    assert F.dense == (n < DENSE_CUTOFF)
    np.testing.assert_allclose(solve(F, b), np.linalg.solve(A, b), rtol=1e-10)
    np.testing.assert_allclose(F.solve(b, trans=True), np.linalg.solve(A.T, b), rtol=1e-10)


def test_singular_matrix_flagged():
    A = np.array([[1.0, 2.0], [2.0, 4.0]])
    F = lu_factor(A)
    assert F.singular
    with pytest.raises(SingularMatrixError):
        solve(F, np.ones(2))
    assert lu_factor(np.zeros((3, 3))).singular


def test_bandwidth():
    A = np.diag(np.ones(5)) + np.diag(np.ones(3), 2)
    assert bandwidth(A) == 2


def _random_generator(rng, n, bw, leak):
    Q = np.zeros((n, n))
    for i in range(n):
        for j in range(max(0, i - bw), min(n, i + bw + 1)):
            if i != j and rng.random() < 0.7:
                Q[i, j] = rng.exponential()
    qo = np.where(rng.random(n) < leak, rng.exponential(size=n), 0.0)
    qo[-1] = max(qo[-1], 0.5)
    np.fill_diagonal(Q, -(Q.sum(axis=1) + qo))
    return Q, qo


@given(st.integers(2, 40), st.integers(1, 4), st.integers(0, 10 ** 6))
@settings(max_examples=60, deadline=None)
def test_mmatrix_solves_agree_with_dense(n, bw, seed):
    rng = np.random.default_rng(seed)
    Q, qo = _random_generator(rng, n, bw, 0.3)
    for i in range(n - 1):  # keep every state able to reach the leaking last state
        if Q[i, i + 1] == 0:
            Q[i, i + 1] = 0.1
            Q[i, i] -= 0.1
    F = mmatrix_lu(Q, qo)
    B = rng.random((n, 2))
    ref = np.linalg.solve(-Q.T, B)
    np.testing.assert_allclose(F.solve_transposed(B), ref, rtol=1e-8)
    np.testing.assert_allclose(F.solve(B), np.linalg.solve(-Q, B), rtol=1e-8)
    norm = F.solve_transposed(B, normalize=True)
    np.testing.assert_allclose(norm, ref / ref.sum(axis=0), rtol=1e-8)


def test_mmatrix_null_vector_matches_eigenvector():
    rng = np.random.default_rng(3)
    Q, _ = _random_generator(rng, 12, 2, 0.0)
    for i in range(11):
        Q[i, i + 1] += 0.2
        Q[i + 1, i] += 0.2
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    pi = mmatrix_lu(Q, np.zeros(12)).null_vector()
    assert np.abs(pi @ Q).max() < 1e-12
    assert pi.sum() == pytest.approx(1.0)


def test_mmatrix_stays_accurate_on_nearly_decomposable_chain(bimodal):
    # two wells separated by a deep valley; compare with the product formula
    from srnstat.scheme_bdp import BirthDeathSpec, bdp_conditional

    r = 700
    T = interval_truncation(r)
    Qr = assemble_Qr(bimodal, T)
    qo = jumps(bimodal, T).out_rate
    F = mmatrix_lu(Qr, qo)
    e = np.zeros(r)
    e[r - 1] = 1.0
    pi = F.solve_transposed(e, normalize=True)
    ref = bdp_conditional(BirthDeathSpec.from_network(bimodal), r).values
    np.testing.assert_allclose(pi, ref, rtol=1e-9, atol=1e-300)


def test_mmatrix_input_checks():
    with pytest.raises(ValueError):
        mmatrix_lu(np.array([[-1.0, -1.0], [1.0, -1.0]]), np.zeros(2))
    with pytest.raises(ValueError):
        mmatrix_lu(np.array([[-1.0, 1.0], [1.0, -1.0]]), np.array([-1.0, 0.0]))
    F = mmatrix_lu(np.array([[-1.0, 1.0], [1.0, -1.0]]), np.zeros(2))
    assert F.singular
    with pytest.raises(SingularMatrixError):
        F.solve_transposed(np.ones(2))
    G = mmatrix_lu(np.array([[-2.0, 1.0], [1.0, -1.0]]), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        G.solve(np.array([-1.0, 0.0]))


@given(st.integers(0, 10 ** 9), st.integers(2, 120))
@settings(max_examples=100, deadline=None)
def test_solve_residual_contract(seed, n):
    from scipy.sparse import random as sprandom

    rng = np.random.default_rng(seed)
    A = sprandom(n, n, density=min(1.0, 4.0 / n), random_state=rng, data_rvs=lambda k: rng.uniform(-1, 1, k))
    A = A.toarray()
    np.fill_diagonal(A, np.abs(A).sum(axis=1) + rng.uniform(0.5, 2.0, n))
    b = rng.standard_normal(n)
    F = lu_factor(csr_matrix(A))
    assert not F.singular
    x = solve(F, b)
    assert np.abs(A @ x - b).max() <= 1e-9 * (1 + np.abs(b).max())
    xt = solve(F, b, trans=True)
    assert np.abs(A.T @ xt - b).max() <= 1e-9 * (1 + np.abs(b).max())
