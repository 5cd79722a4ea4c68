"""Truncated rate matrices and the LU factorizations every scheme shares.

Sparse systems go through SuperLU (via scipy); anything smaller than
``DENSE_CUTOFF`` is factored densely with LAPACK.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse import csc_matrix, csr_matrix, issparse
from scipy.sparse.linalg import splu

from .model import ReactionNetwork
from .statespace import Truncation, jumps

DENSE_CUTOFF = 64
PIVOT_FLOOR = 1e-12


class SingularMatrixError(ArithmeticError):
    pass


def assemble_Qr(net: ReactionNetwork, T: Truncation) -> csr_matrix:
    """Rate matrix restricted to T with the *full* exit rate ``-q(x)`` on the diagonal.

    Row sums are therefore ``-q_o(x)``: whatever leaks out of T.
    """
    J = jumps(net, T)
    n = len(T)
    rows, cols = np.nonzero((J.target >= 0) & (J.A > 0))
    tg = J.target[rows, cols]
    off = tg != rows  # a reaction cannot map x to itself once nu != 0, but be safe
    r = np.concatenate([rows[off], np.arange(n)])
    c = np.concatenate([tg[off], np.arange(n)])
    v = np.concatenate([J.A[rows[off], cols[off]], -J.exit_rate])
    Q = csr_matrix((v, (r, c)), shape=(n, n))
    Q.sum_duplicates()
    Q.eliminate_zeros()
    Q.sort_indices()
    return Q


def scale_factors(net: ReactionNetwork, T: Truncation) -> np.ndarray:
    """``max(q(x), 1)``: the diagonal scaling used for the scaled variables ``sigma = s * pi``."""
    return np.maximum(jumps(net, T).exit_rate, 1.0)


@dataclass
class LUFactorization:
    shape: tuple
    singular: bool
    pivot_floor: float
    min_pivot: float
    dense: bool
    _factor: object = field(default=None, repr=False)

    def solve(self, b, trans: bool = False, allow_singular: bool = False):
        return solve(self, b, trans=trans, allow_singular=allow_singular)


def lu_factor(A) -> LUFactorization:
    """LU with partial pivoting.  Near-zero pivots set ``singular`` rather than raising."""
    n, m = A.shape
    if n != m:
        raise ValueError("lu_factor needs a square matrix")
    if n == 0:
        raise ValueError("empty matrix")
    if issparse(A):
        amax = abs(A).max() if A.nnz else 0.0
    else:
        A = np.asarray(A, dtype=float)
        amax = np.abs(A).max()
    floor = PIVOT_FLOOR * amax
    if amax == 0.0:
        return LUFactorization((n, n), True, floor, 0.0, True, None)
    if n < DENSE_CUTOFF:
        D = A.toarray() if issparse(A) else A
        with warnings.catch_warnings():  # exact zero pivots are reported through ``singular``
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(D, check_finite=True)
        min_piv = float(np.abs(np.diag(lu)).min())
        return LUFactorization((n, n), min_piv < floor, floor, min_piv, True, (lu, piv))
    try:
        F = splu(csc_matrix(A, dtype=float))
    except RuntimeError:
        return LUFactorization((n, n), True, floor, 0.0, False, None)
    min_piv = float(np.abs(F.U.diagonal()).min())
    return LUFactorization((n, n), min_piv < floor, floor, min_piv, False, F)


def solve(F: LUFactorization, b, trans: bool = False, allow_singular: bool = False) -> np.ndarray:
    """Solve ``A x = b`` (or ``A^T x = b``) reusing the factorization; ``b`` may have several columns.

    ``allow_singular`` lets callers that verify their own answer (sign checks,
    residuals) proceed past the pivot floor, as long as no pivot is exactly zero.
    """
    if F.singular and not (allow_singular and F._factor is not None and F.min_pivot > 0):
        raise SingularMatrixError(f"matrix is singular to working precision (min pivot {F.min_pivot:.3g})")
    b = np.asarray(b, dtype=float)
    if F.dense:
        return sla.lu_solve(F._factor, b, trans=1 if trans else 0)
    return F._factor.solve(b, trans="T" if trans else "N")


# --------------------------------------------------------------------------- subtraction-free factorization

ACCURATE_MAX_STATES = 3000


@dataclass
class MMatrixLU:
    """LU factors of ``-Q_r`` computed without subtractions.

    ``-Q_r`` is an M-matrix whose row sums are the out-rates ``q_o``.  Carrying
    the row sums through Gaussian elimination (in the style of the
    Grassmann-Taksar-Heyman algorithm) gives every pivot as a sum of
    nonnegative terms, so the factors, and the solutions of systems with
    nonnegative right-hand sides, have small componentwise relative error even
    when the chain is nearly decomposable and ordinary LU loses many digits.
    """

    L: np.ndarray  # strictly lower multipliers (<= 0)
    U: np.ndarray  # strictly upper off-diagonals (<= 0)
    pivots: np.ndarray  # diagonal of U (>= 0)
    bandwidth: int

    @property
    def singular(self) -> bool:
        return bool(np.any(self.pivots <= 0))

    def solve_transposed(self, B: np.ndarray, normalize: bool = False) -> np.ndarray:
        """Solve ``(-Q_r)^T X = B`` for nonnegative ``B`` (one column per right-hand side).

        Solutions of nearly closed systems can exceed the float range, so the
        columns are rescaled on the fly; with ``normalize`` each column is
        returned summing to one, otherwise the scale is restored at the end.
        """
        if self.singular:
            raise SingularMatrixError("M-matrix factorization has a zero pivot")
        B = np.asarray(B, dtype=float)
        if np.any(B < 0):
            raise ValueError("right-hand sides must be nonnegative")
        vec = B.ndim == 1
        W = (B[:, None] if vec else B).copy()
        n = W.shape[0]
        bw = self.bandwidth
        U, L, d = self.U, self.L, self.pivots
        logscale = np.zeros(W.shape[1])

        def rescale(row):
            big = row > _RESCALE_AT
            if big.any():
                f = row[big]
                W[:, big] /= f
                logscale[big] += np.log(f)

        # U^T w = b: w_j = (b_j + sum_{k<j} |U_kj| w_k) / d_j
        for j in range(n):
            lo = max(0, j - bw)
            if j > lo:
                W[j] -= U[lo:j, j] @ W[lo:j]
            W[j] /= d[j]
            rescale(W[j])
        # L^T x = w: x_k = w_k + sum_{i>k} |L_ik| x_i
        for k in range(n - 2, -1, -1):
            hi = min(n, k + bw + 1)
            W[k] -= L[k + 1:hi, k] @ W[k + 1:hi]
            rescale(W[k])
        if normalize:
            W /= W.sum(axis=0)
        else:
            W *= np.exp(logscale)
        return W[:, 0] if vec else W

    def solve(self, B: np.ndarray) -> np.ndarray:
        """Solve ``(-Q_r) X = B`` for nonnegative ``B``; also subtraction-free."""
        if self.singular:
            raise SingularMatrixError("M-matrix factorization has a zero pivot")
        B = np.asarray(B, dtype=float)
        if np.any(B < 0):
            raise ValueError("right-hand sides must be nonnegative")
        vec = B.ndim == 1
        W = (B[:, None] if vec else B).copy()
        n = W.shape[0]
        bw = self.bandwidth
        U, L, d = self.U, self.L, self.pivots
        # L y = b: y_i = b_i + sum_{k<i} |L_ik| y_k
        for i in range(1, n):
            lo = max(0, i - bw)
            W[i] -= L[i, lo:i] @ W[lo:i]
        # U x = y: x_k = (y_k + sum_{j>k} |U_kj| x_j) / d_k
        for k in range(n - 1, -1, -1):
            hi = min(n, k + bw + 1)
            if hi > k + 1:
                W[k] -= U[k, k + 1:hi] @ W[k + 1:hi]
            W[k] /= d[k]
        return W[:, 0] if vec else W

    def null_vector(self) -> np.ndarray:
        """Stationary vector of a conservative generator (all row sums zero).

        Only the last pivot may vanish; the forward pass then reduces to the
        last unit vector and the back pass is the usual GTH back substitution.
        """
        n = self.pivots.size
        if np.any(self.pivots[:-1] <= 0):
            raise SingularMatrixError("generator has more than one closed class in this ordering")
        x = np.zeros(n)
        x[-1] = 1.0
        L, bw = self.L, self.bandwidth
        for k in range(n - 2, -1, -1):
            hi = min(n, k + bw + 1)
            x[k] = -(L[k + 1:hi, k] @ x[k + 1:hi])
            if x[k] > _RESCALE_AT:
                x /= x[k]
        return x / x.sum()


_RESCALE_AT = 1e100
ACCURATE_MAX_WORK = 2e9


def bandwidth(A) -> int:
    A = A.tocoo() if issparse(A) else csr_matrix(A).tocoo()
    off = A.row != A.col
    return int(np.abs(A.row[off] - A.col[off]).max()) if off.any() else 0


def accurate_feasible(A) -> bool:
    """Whether the dense banded subtraction-free factorization is affordable for ``A``."""
    n = A.shape[0]
    bw = bandwidth(A)
    return n <= ACCURATE_MAX_STATES and n * (bw + 1) ** 2 <= ACCURATE_MAX_WORK


def mmatrix_lu(Qr, out_rate: np.ndarray) -> MMatrixLU:
    """Factor ``-Q_r`` given its off-diagonal rates and exact row sums ``out_rate``."""
    A = -(Qr.toarray() if issparse(Qr) else np.asarray(Qr, dtype=float))
    n = A.shape[0]
    np.fill_diagonal(A, 0.0)
    if np.any(A > 0):
        raise ValueError("off-diagonal rates must be nonnegative")
    rows, cols = np.nonzero(A)
    bw = int(np.abs(rows - cols).max()) if rows.size else 0
    s = np.asarray(out_rate, dtype=float).copy()
    if np.any(s < 0):
        raise ValueError("out-rates must be nonnegative")
    d = np.zeros(n)
    for k in range(n):
        hi = min(n, k + bw + 1)
        t = -A[k, k + 1:hi].sum()
        d[k] = s[k] + t
        if d[k] <= 0:
            continue  # singular: leave the trailing block as is
        col = A[k + 1:hi, k]  # <= 0
        nz = np.flatnonzero(col)
        if nz.size == 0:
            continue
        rows_i = k + 1 + nz
        mult = -col[nz] / d[k]  # |l_ik|
        A[rows_i, k] = -mult
        # A[i, j] += |l_ik| A[k, j] for j > k; the diagonal stays unused
        A[rows_i, k + 1:hi] += np.outer(mult, A[k, k + 1:hi])
        A[rows_i, rows_i] = 0.0
        s[rows_i] += mult * s[k]
    return MMatrixLU(np.tril(A, -1), np.triu(A, 1), d, bw)
