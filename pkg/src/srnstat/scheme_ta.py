"""Truncation and augmentation: redirect the flow leaving a truncation back into it."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.sparse import csr_matrix, diags
from scipy.sparse.linalg import splu

from .distribution import TruncatedDistribution
from .model import ReactionNetwork
from .numlin import SingularMatrixError, accurate_feasible, assemble_Qr, lu_factor, mmatrix_lu, solve
from .statespace import (
    DEFAULT_STATE_CAP,
    StateCapExceeded,
    Truncation,
    as_function,
    communicating_classes,
    in_boundary,
    jumps,
    out_boundary,
)

SIGN_TOL = 1e-10
REPLACED_RESIDUAL_TOL = 1e-8


class TASolveError(ArithmeticError):
    """The augmented chain has no unique stationary distribution, or the solve is not trustworthy."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# --------------------------------------------------------------------------- re-entry rules


@dataclass(frozen=True)
class FixedState:
    state: tuple


@dataclass(frozen=True)
class Uniform:
    """Re-enter uniformly over the in-boundary."""


@dataclass(frozen=True)
class BoundaryMid:
    """Re-enter at the middle state of the lexicographically sorted in-boundary."""


@dataclass(frozen=True)
class ConditionalSeries:
    depth: int


@dataclass
class Custom:
    """Explicit re-entry rows: ``rows[i]`` is a distribution over T for out-boundary state index ``i``."""

    rows: dict
    note: str = ""


ReentrySpec = Union[FixedState, Uniform, BoundaryMid, ConditionalSeries, Custom]


def parse_reentry(text: str) -> ReentrySpec:
    """``state:1,2`` | ``uniform`` | ``boundary-mid`` | ``conditional:N``."""
    t = text.strip()
    if t == "uniform":
        return Uniform()
    if t == "boundary-mid":
        return BoundaryMid()
    if t.startswith("state:"):
        return FixedState(tuple(int(v) for v in t[6:].split(",")))
    if t.startswith("conditional:"):
        n = int(t[12:])
        if n < 0:
            raise ValueError("series depth must be nonnegative")
        return ConditionalSeries(n)
    raise ValueError(f"unknown re-entry spec {text!r}")


def boundary_mid_state(net: ReactionNetwork, T: Truncation) -> int:
    B = in_boundary(net, T)
    if B.size == 0:
        raise ValueError("the truncation has an empty in-boundary")
    return int(B[len(B) // 2])


@dataclass
class AugmentedSystem:
    Q: csr_matrix  # Q^{e_r}: conservative on T
    Qr: csr_matrix
    out_rate: np.ndarray
    E: csr_matrix  # re-entry rows (zero rows off the out-boundary)
    truncation: Truncation
    reentry: object
    fixed_index: Optional[int] = None
    net: Optional[ReactionNetwork] = field(default=None, repr=False)


def _reentry_matrix(net, T, spec, qo) -> tuple:
    n = len(T)
    outs = np.flatnonzero(qo > 0)
    if isinstance(spec, FixedState):
        z = T.index_of(spec.state)
        E = csr_matrix((np.ones(outs.size), (outs, np.full(outs.size, z))), shape=(n, n))
        return E, z
    if isinstance(spec, BoundaryMid):
        z = boundary_mid_state(net, T)
        E = csr_matrix((np.ones(outs.size), (outs, np.full(outs.size, z))), shape=(n, n))
        return E, z
    if isinstance(spec, Uniform):
        B = in_boundary(net, T)
        if B.size == 0 and outs.size:
            raise ValueError("uniform re-entry needs a nonempty in-boundary")
        rows = np.repeat(outs, B.size)
        cols = np.tile(B, outs.size)
        vals = np.full(rows.size, 1.0 / max(B.size, 1))
        return csr_matrix((vals, (rows, cols)), shape=(n, n)), None
    if isinstance(spec, ConditionalSeries):
        return _reentry_matrix(net, T, conditional_reentry_approx(net, T, spec.depth), qo)
    if isinstance(spec, Custom):
        data, ri, ci = [], [], []
        for i in outs:
            if int(i) not in spec.rows:
                raise ValueError(f"custom re-entry has no row for out-boundary state {T.state(i)}")
            row = np.asarray(spec.rows[int(i)], dtype=float)
            if row.shape != (n,) or np.any(row < 0) or abs(row.sum() - 1.0) > 1e-12:
                raise ValueError(f"re-entry row for {T.state(i)} is not a probability vector on T")
            nz = np.flatnonzero(row)
            data.extend(row[nz])
            ri.extend([i] * nz.size)
            ci.extend(nz)
        return csr_matrix((data, (ri, ci)), shape=(n, n)), None
    raise TypeError(f"unknown re-entry spec {spec!r}")


def build_augmented(net: ReactionNetwork, T: Truncation, e: ReentrySpec) -> AugmentedSystem:
    """``Q^{e} = Q_r + diag(q_o) E``: the leak from each state is sent back along its re-entry row."""
    Qr = assemble_Qr(net, T)
    qo = jumps(net, T).out_rate
    E, z = _reentry_matrix(net, T, e, qo)
    Qe = csr_matrix(Qr + diags(qo) @ E)
    Qe.sum_duplicates()
    Qe.eliminate_zeros()
    return AugmentedSystem(Qe, Qr, qo, E, T, e, z, net)


# --------------------------------------------------------------------------- solves


def _sign_consistent(y: np.ndarray):
    """Return ``y`` flipped to be nonnegative, or None when entries of both signs are significant."""
    k = int(np.argmax(np.abs(y)))
    if y[k] == 0:
        return None
    y = y if y[k] > 0 else -y
    if np.any(y < -SIGN_TOL * y[k]):
        return None
    y = np.where(y < 0, 0.0, y)
    return y


def _class_diagnostics(sys: AugmentedSystem) -> dict:
    Qe = sys.Q.tocoo()
    n = Qe.shape[0]
    from scipy.sparse.csgraph import connected_components

    off = (Qe.row != Qe.col) & (Qe.data > 0)
    G = csr_matrix((np.ones(off.sum()), (Qe.row[off], Qe.col[off])), shape=(n, n))
    ncomp, label = connected_components(G, directed=True, connection="strong")
    Gc = G.tocoo()
    leaves = np.zeros(ncomp, dtype=bool)
    cross = label[Gc.row] != label[Gc.col]
    leaves[label[Gc.row[cross]]] = True
    closed = [sorted(sys.truncation.state(i) for i in np.flatnonzero(label == c)) for c in range(ncomp) if not leaves[c]]
    return {"closed_classes_of_augmented_chain": closed, "n_closed": len(closed),
            "note": "more than one closed class means the stationary distribution is not unique"}


TA_METHODS = ("auto", "accurate", "inverse-row", "replaced-equation")


def ta_solve(sys: AugmentedSystem, method: str = "auto") -> TruncatedDistribution:
    """Stationary distribution of the augmented chain.

    ``accurate`` uses the subtraction-free factorization (small truncations,
    and the only path that stays accurate on nearly decomposable chains);
    ``inverse-row`` solves ``Q_r^T y = e_z`` for fixed-state re-entry;
    ``replaced-equation`` swaps one stationary equation for normalization.
    ``auto`` picks the first of these that applies.
    """
    if method not in TA_METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {TA_METHODS}")
    if method in ("auto", "accurate"):
        target = sys.Qr if sys.fixed_index is not None else sys.Q
        if method == "accurate" or accurate_feasible(target):
            pi = _accurate_solve(sys)
            if pi is not None:
                return pi
    if method in ("auto", "inverse-row", "accurate") and sys.fixed_index is not None:
        pi = _inverse_row_solve(sys)
        if pi is not None:
            return pi
    return _general_solve(sys)


def _accurate_solve(sys: AugmentedSystem) -> Optional[TruncatedDistribution]:
    T = sys.truncation
    n = len(T)
    try:
        if sys.fixed_index is not None:
            F = mmatrix_lu(sys.Qr, sys.out_rate)
            if F.singular:
                return None
            e = np.zeros(n)
            e[sys.fixed_index] = 1.0
            pi = F.solve_transposed(e, normalize=True)
        else:
            F = mmatrix_lu(sys.Q, np.zeros(n))
            pi = F.null_vector()
    except SingularMatrixError:
        return None
    if not np.all(np.isfinite(pi)):
        return None
    return TruncatedDistribution(T, pi, {"scheme": "ta", "path": "accurate", "residual": _residual(sys, pi)})


def _inverse_row_solve(sys: AugmentedSystem) -> Optional[TruncatedDistribution]:
    T = sys.truncation
    n = len(T)
    F = lu_factor(sys.Qr.T.tocsc())
    if F.singular and F.min_pivot <= 0:
        return None
    e = np.zeros(n)
    e[sys.fixed_index] = 1.0
    try:
        y = solve(F, e, allow_singular=True)
    except SingularMatrixError:
        return None
    if not np.all(np.isfinite(y)):
        return None
    y = _sign_consistent(y)
    if y is None or y.sum() <= 0:
        return None
    pi = y / y.sum()
    res = _residual(sys, pi)
    if res > REPLACED_RESIDUAL_TOL * _row_scale(sys):
        return None
    return TruncatedDistribution(T, pi, {"scheme": "ta", "path": "inverse-row", "residual": res})


def _row_scale(sys: AugmentedSystem) -> float:
    return max(1.0, float(np.abs(sys.Q.diagonal()).max(initial=0.0)))


def _residual(sys: AugmentedSystem, pi: np.ndarray) -> float:
    return float(np.abs(sys.Q.T @ pi).max(initial=0.0))


def _general_solve(sys: AugmentedSystem) -> TruncatedDistribution:
    T = sys.truncation
    n = len(T)
    exit_rates = -sys.Q.diagonal()
    k = int(np.argmax(exit_rates))
    A = sys.Q.T.tolil()
    A[k, :] = np.ones(n)
    b = np.zeros(n)
    b[k] = 1.0
    F = lu_factor(A.tocsr())
    if F.singular:
        raise TASolveError("augmented chain has no unique stationary distribution", _class_diagnostics(sys))
    pi = solve(F, b)
    scale = max(1.0, float(np.abs(pi).max()))
    if np.any(pi < -1e-10 * scale) or not np.all(np.isfinite(pi)):
        raise TASolveError("stationary solve produced significantly negative entries", _class_diagnostics(sys))
    pi = np.where(pi < 0, 0.0, pi)
    pi = pi / pi.sum()
    replaced = float(abs(sys.Q.getcol(k).T @ pi).item()) if n else 0.0
    if replaced > REPLACED_RESIDUAL_TOL * _row_scale(sys):
        raise TASolveError(f"replaced stationary equation has residual {replaced:.3g}", _class_diagnostics(sys))
    return TruncatedDistribution(T, pi, {"scheme": "ta", "path": "replaced-equation", "replaced_row": k,
                                         "residual": _residual(sys, pi)})


# --------------------------------------------------------------------------- conditional re-entry series


def conditional_reentry_approx(net: ReactionNetwork, T: Truncation, depth: int,
                               cap: int = 200_000) -> Custom:
    """Partial sums (over at most ``depth + 1`` jumps outside T) of the exact conditional re-entry law.

    Each out-boundary row is scaled to sum to one.  A row whose walk never
    returns within the horizon falls back to uniform re-entry over the
    in-boundary; such rows are listed in ``note``.
    """
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    n = len(T)
    J = jumps(net, T)
    outs = np.flatnonzero(J.out_rate > 0)
    rows = {}
    if outs.size == 0:
        return Custom(rows, "no out-boundary")
    shell: dict = {}
    shell_states: list = []

    def shell_index(y):
        key = tuple(y)
        i = shell.get(key)
        if i is None:
            if len(shell_states) >= cap:
                raise StateCapExceeded("exterior shell exceeded the state cap")
            i = shell[key] = len(shell_states)
            shell_states.append(key)
        return i

    # first exits: mu0[x, z] = q(x, z) / q_o(x)
    mu = {}
    for i in outs:
        acc = {}
        for j in range(net.n_reactions):
            if J.target[i, j] < 0 and J.A[i, j] > 0:
                z = shell_index(T.states[i] + net.nu[j])
                acc[z] = acc.get(z, 0.0) + J.A[i, j] / J.out_rate[i]
        mu[int(i)] = acc
    ret = {int(i): np.zeros(n) for i in outs}
    step_cache: dict = {}

    def step(z):
        """Split the jump law at exterior state z into (returns to T, moves outside)."""
        if z in step_cache:
            return step_cache[z]
        x = np.array(shell_states[z], dtype=np.int64)
        a = net.propensities(x[None, :])[0]
        q = a.sum()
        back, away = {}, {}
        if q > 0:
            for j in range(net.n_reactions):
                if a[j] <= 0 or not net.nu[j].any():
                    continue
                y = x + net.nu[j]
                k = int(T.lookup(y[None, :])[0])
                if k >= 0:
                    back[k] = back.get(k, 0.0) + a[j] / q
                else:
                    zz = shell_index(y)
                    away[zz] = away.get(zz, 0.0) + a[j] / q
        step_cache[z] = (back, away)
        return back, away

    for i in outs:
        cur = mu[int(i)]
        for _ in range(depth + 1):
            nxt = {}
            for z, w in cur.items():
                back, away = step(z)
                for k, p in back.items():
                    ret[int(i)][k] += w * p
                for zz, p in away.items():
                    nxt[zz] = nxt.get(zz, 0.0) + w * p
            cur = nxt
            if not cur:
                break
    fallback = []
    B = in_boundary(net, T)
    for i in outs:
        row = ret[int(i)]
        s = row.sum()
        if s > 0:
            rows[int(i)] = row / s
        else:
            fallback.append(T.state(i))
            u = np.zeros(n)
            u[B] = 1.0 / B.size
            rows[int(i)] = u
    note = f"uniform fallback for {len(fallback)} rows" if fallback else ""
    return Custom(rows, note)


# --------------------------------------------------------------------------- diagnostics


def ta_diagnostics(sys: AugmentedSystem, pi: TruncatedDistribution, v=None) -> dict:
    """Outflow rate ``O_r`` and, given v and a single re-entry state, the convergence factor ``F_r``."""
    O = float(pi.values @ sys.out_rate)
    out = {"outflow": O, "outflow_rigor": "heuristic", "convergence_factor": None,
           "convergence_factor_rigor": "heuristic: values of v on a finite set can be altered at will"}
    if v is not None and sys.fixed_index is not None:
        T = sys.truncation
        vf = as_function(sys.net, v)
        vals = vf(T.states)
        outs = np.flatnonzero(sys.out_rate > 0)
        vmax = float(vals[outs].max()) if outs.size else 0.0
        out["convergence_factor"] = (float(vals[sys.fixed_index]) + vmax) * O if outs.size else 0.0
    return out
