"""Iterated truncate-and-augment: sweep the re-entry state over the in-boundary.

Each sweep element is a fixed-state TA solution ``pi^z``.  All of them come
from one factorization of ``Q_r^T``, since ``pi^z`` is the normalised ``z``-th
row of ``Q_r^{-1}``.  Statewise min/max over the sweep, padded with the tail
bound, bracket the stationary distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .distribution import BoundsPair, TruncatedDistribution
from .expr import Expr
from .model import ReactionNetwork
from .numlin import (SingularMatrixError, accurate_feasible, assemble_Qr, lu_factor, mmatrix_lu, solve)
from .scheme_ta import SIGN_TOL, TASolveError, _class_diagnostics, build_augmented, ta_solve, Uniform
from .statespace import Truncation, as_function, communicating_classes, in_boundary, jumps

CHUNK = 256

CASES = ("nonneg-outside", "nonpos-outside", "growth-controlled")


@dataclass
class SweepElement:
    z: int  # index into the truncation
    pi: TruncatedDistribution


@dataclass
class Sweep:
    truncation: Truncation
    elements: list
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.elements)

    def matrix(self) -> np.ndarray:
        """Sweep distributions stacked as rows, in in-boundary index order."""
        return np.vstack([e.pi.values for e in self.elements])


@dataclass
class AverageBounds:
    lower: Optional[float]
    upper: Optional[float]
    f: str
    case: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lower is not None and self.upper is not None and self.lower > self.upper + 1e-12:
            raise ValueError("average lower bound exceeds upper bound")


def ita_sweep(net: ReactionNetwork, T: Truncation, method: str = "auto") -> Sweep:
    """``pi^z`` for every ``z`` in the in-boundary, from one factorization of ``Q_r^T``.

    ``method`` is ``accurate`` (subtraction-free factorization, the default for
    small truncations), ``lu`` (sparse LU), or ``auto``.
    """
    B = in_boundary(net, T)
    n = len(T)
    qo = jumps(net, T).out_rate
    Qr = assemble_Qr(net, T)
    if B.size == 0:
        if qo.any():
            raise TASolveError("mass leaks out of the truncation but nothing can re-enter it", _reducibility(net, T))
        # a closed truncation: TA is the exact stationary distribution of the finite chain
        pi = ta_solve(build_augmented(net, T, Uniform()))
        return Sweep(T, [SweepElement(-1, pi)], {"degenerate": True})
    use_accurate = method == "accurate" or (method == "auto" and accurate_feasible(Qr))
    cols = []
    if use_accurate:
        F = mmatrix_lu(Qr, qo)
        if F.singular:
            raise TASolveError("Q_r is singular: some class of the truncation cannot leak out",
                               _reducibility(net, T))
        for start in range(0, B.size, CHUNK):
            idx = B[start:start + CHUNK]
            E = np.zeros((n, idx.size))
            E[idx, np.arange(idx.size)] = 1.0
            cols.append(F.solve_transposed(E, normalize=True))
        path = "accurate"
    else:
        F = lu_factor(Qr.T.tocsc())
        if F.singular and F.min_pivot <= 0:
            raise TASolveError("Q_r is singular: some class of the truncation cannot leak out",
                               _reducibility(net, T))
        for start in range(0, B.size, CHUNK):
            idx = B[start:start + CHUNK]
            E = np.zeros((n, idx.size))
            E[idx, np.arange(idx.size)] = 1.0
            Y = solve(F, E, allow_singular=True)
            cols.append(_sign_fix(Y, B[start:start + CHUNK], net, T))
        path = "lu"
    Y = np.hstack(cols)
    elements = [SweepElement(int(z), TruncatedDistribution(T, Y[:, j], {"scheme": "ta", "reentry": int(z), "path": path}))
                for j, z in enumerate(B)]
    return Sweep(T, elements, {"path": path})


def _sign_fix(Y: np.ndarray, zs, net, T) -> np.ndarray:
    Y = np.atleast_2d(Y)
    out = np.empty_like(Y)
    for j in range(Y.shape[1]):
        y = Y[:, j]
        if not np.all(np.isfinite(y)):
            raise TASolveError(f"non-finite solution for re-entry state {T.state(zs[j])}", _reducibility(net, T))
        k = int(np.argmax(np.abs(y)))
        y = y if y[k] > 0 else -y
        if np.any(y < -SIGN_TOL * y[k]):
            raise TASolveError(f"sign-inconsistent solution for re-entry state {T.state(zs[j])}",
                               _reducibility(net, T))
        y = np.where(y < 0, 0.0, y)
        out[:, j] = y / y.sum()
    return out


def _reducibility(net, T) -> dict:
    cd = communicating_classes(net, T)
    return {"closed_classes": [[T.state(i) for i in c] for c in cd.closed_classes],
            "note": "a class with no exit from the truncation makes Q_r singular"}


def _tail(T: Truncation, c: Optional[float], r: Optional[float]) -> float:
    if c is None:
        if T.tail_bound is None:
            raise ValueError("need a moment bound (c, r) or a truncation carrying its own tail bound")
        return float(T.tail_bound)
    if r is None:
        r = T.r
    if r <= c:
        raise ValueError(f"lower bounds need r > c (r={r}, c={c})")
    return c / r


def ita_bounds(sweep: Sweep, c: Optional[float] = None, r: Optional[float] = None) -> BoundsPair:
    """``l = (1 - eps) min_z pi^z``, ``u = max_z pi^z`` with ``eps = c/r`` (or the truncation's own tail bound)."""
    eps = _tail(sweep.truncation, c, r)
    P = sweep.matrix()
    T = sweep.truncation
    lower = TruncatedDistribution(T, (1.0 - eps) * P.min(axis=0))
    upper = TruncatedDistribution(T, P.max(axis=0))
    return BoundsPair(lower, upper, eps, "statewise", {"scheme": "ita", "sweep_size": len(sweep)})


def _sweep_range(sweep: Sweep, fvals: np.ndarray, eps: float) -> tuple:
    avgs = sweep.matrix() @ fvals
    lo, hi = float(avgs.min()), float(avgs.max())
    # scaling by (1 - eps) can move either end depending on sign
    return min(lo, (1.0 - eps) * lo), max(hi, (1.0 - eps) * hi)


def monomial_sup_ratio(f_exponents: Sequence[int], w_power: int, r: float) -> float:
    """``sup`` of ``x^a / s^k`` over ``s = x_1 + ... + x_n >= r^(1/k)``, the outside of ``{(x_1+...)^k < r}``.

    For fixed ``s`` the monomial peaks at ``x_i = s a_i/|a|``, giving
    ``prod (a_i/|a|)^{a_i} s^{|a| - k}``, decreasing in ``s`` when ``|a| < k``.
    """
    a = np.asarray(f_exponents, dtype=float)
    deg = a.sum()
    if deg > w_power:
        return float("inf")
    s = r ** (1.0 / w_power)
    nz = a > 0
    coef = float(np.prod((a[nz] / deg) ** a[nz])) if deg > 0 else 1.0
    return coef * s ** (deg - w_power)


def ita_average_bounds(sweep: Sweep, f, case: str, net: Optional[ReactionNetwork] = None,
                       c: Optional[float] = None, r: Optional[float] = None,
                       sup_ratio: Optional[float] = None) -> AverageBounds:
    """Bounds on ``pi(f)``.

    ``case`` states what the caller knows about ``f`` outside the truncation:
    ``nonneg-outside`` gives a lower bound, ``nonpos-outside`` an upper bound,
    and ``growth-controlled`` gives both once ``sup |f|/w`` outside the
    truncation is supplied as ``sup_ratio`` (see ``monomial_sup_ratio``).
    """
    if case not in CASES:
        raise ValueError(f"case must be one of {CASES}")
    T = sweep.truncation
    eps = _tail(T, c, r)
    if callable(f) and not isinstance(f, (str, Expr)):
        fn = f
    else:
        if net is None:
            raise ValueError("a network is needed to evaluate an expression")
        fn = as_function(net, f)
    fvals = np.asarray(fn(T.states), dtype=float)
    lo, hi = _sweep_range(sweep, fvals, eps)
    label = str(f) if not callable(f) or isinstance(f, (str, Expr)) else getattr(f, "__name__", "f")
    if case == "nonneg-outside":
        return AverageBounds(lo, None, label, case)
    if case == "nonpos-outside":
        return AverageBounds(None, hi, label, case)
    if sup_ratio is None:
        raise ValueError("growth-controlled bounds need sup |f|/w outside the truncation (sup_ratio)")
    if c is None:
        raise ValueError("growth-controlled bounds need the moment constant c")
    pad = c * sup_ratio
    return AverageBounds(lo - pad, hi + pad, label, case, {"padding": pad})


@dataclass
class MarginalBounds:
    indices: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    species: int
    tail_bound: float
    meta: dict = field(default_factory=dict)

    @property
    def lower_error(self) -> float:
        """``1 - sum of lower bounds``: the exact TV and l1 error of the lower bound."""
        return 1.0 - float(self.lower.sum())


def ita_marginal_bounds(sweep: Sweep, species: int, c: Optional[float] = None,
                        r: Optional[float] = None) -> MarginalBounds:
    """Bounds on the marginal of one species over the counts seen in the truncation.

    The upper bounds only account for states inside the truncation, so they
    need not bound the true marginal from above.
    """
    T = sweep.truncation
    eps = _tail(T, c, r)
    counts = T.states[:, species]
    idx = np.unique(counts)
    P = sweep.matrix()
    # marginal of every sweep element: (sweep, indices)
    M = np.zeros((P.shape[0], idx.size))
    pos = np.searchsorted(idx, counts)
    for j in range(P.shape[0]):
        M[j] = np.bincount(pos, weights=P[j], minlength=idx.size)
    lo = (1.0 - eps) * M.min(axis=0)
    hi = M.max(axis=0)
    return MarginalBounds(idx, lo, hi, species, eps, {"scheme": "ita"})
