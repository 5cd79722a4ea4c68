"""Error measures, tail bounds, drift certificates and computable TA error bounds.

Every number placed in an ``ErrorReport`` carries a rigor flag:

* ``rigorous``: a proven bound given the caller's certified inputs (moment
  bound, drift certificate);
* ``oracle-based``: computed against a known stationary distribution;
* ``heuristic``: a diagnostic with no guarantee attached.

Drift certificates are only ever checked on a finite set of states and say so.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.sparse import csc_matrix, identity
from scipy.sparse.linalg import splu

from .distribution import BoundsPair, TruncatedDistribution
from .lpsolve import LE, LinearProgram, SimplexSolver
from .model import ReactionNetwork
from .numlin import accurate_feasible, assemble_Qr, mmatrix_lu
from .statespace import Truncation, apply_generator, as_function, jumps

RIGOROUS = "rigorous"
ORACLE = "oracle-based"
HEURISTIC = "heuristic"
RIGOR_LEVELS = (RIGOROUS, ORACLE, HEURISTIC)

DRIFT_TOL = 1e-9
FINITE_SET_NOTE = "finite-set verification only: the inequality was checked on the check set, not on the whole space"


# --------------------------------------------------------------------------- reports


@dataclass
class ErrorEntry:
    name: str
    value: Optional[float]
    rigor: str
    note: str = ""

    def __post_init__(self):
        if self.rigor not in RIGOR_LEVELS:
            raise ValueError(f"rigor must be one of {RIGOR_LEVELS}")


def _json_number(v):
    if v is None:
        return None
    v = float(v)
    if math.isfinite(v):
        return v
    return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")


@dataclass
class ErrorReport:
    """Named error figures for one scheme run, in insertion order."""

    scheme: str
    truncation: str
    entries: list = field(default_factory=list)

    def add(self, name: str, value, rigor: str, note: str = "") -> "ErrorReport":
        if any(e.name == name for e in self.entries):
            raise ValueError(f"duplicate report entry {name!r}")
        self.entries.append(ErrorEntry(name, None if value is None else float(value), rigor, note))
        return self

    def extend(self, entries: Sequence[ErrorEntry]) -> "ErrorReport":
        for e in entries:
            self.add(e.name, e.value, e.rigor, e.note)
        return self

    def get(self, name: str) -> ErrorEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def __getitem__(self, name: str) -> Optional[float]:
        return self.get(name).value

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "truncation": self.truncation,
            "entries": [{"name": e.name, "value": _json_number(e.value), "rigor": e.rigor, "note": e.note}
                        for e in self.entries],
        }

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, allow_nan=False)


def truncation_id(T: Truncation) -> str:
    r = "" if T.r != T.r else f":r={T.r:g}"
    return f"{T.kind}{r}:states={len(T)}"


# --------------------------------------------------------------------------- distances


@dataclass(frozen=True)
class Distances:
    tv: float
    l1: float
    wnorm: Optional[float] = None


def _common_support(a, b):
    """Both arguments as aligned vectors over a shared index set, plus that set's states (or None)."""
    if isinstance(a, TruncatedDistribution) and isinstance(b, TruncatedDistribution):
        if a.truncation is b.truncation:
            return a.values, b.values, a.states
        if a.states.shape[1] != b.states.shape[1]:
            raise ValueError("distributions over different numbers of species")
        S, inv = np.unique(np.vstack([a.states, b.states]), axis=0, return_inverse=True)
        inv = np.asarray(inv).ravel()
        va, vb = np.zeros(len(S)), np.zeros(len(S))
        np.add.at(va, inv[:len(a.values)], a.values)
        np.add.at(vb, inv[len(a.values):], b.values)
        return va, vb, S
    if isinstance(a, TruncatedDistribution) or isinstance(b, TruncatedDistribution):
        # a distribution against a padded vector over {0, 1, ...} (one species)
        d, v = (a, b) if isinstance(a, TruncatedDistribution) else (b, a)
        if d.states.shape[1] != 1:
            raise ValueError("padded vectors only pair with one-species distributions")
        v = np.asarray(v, dtype=float).ravel()
        n = max(v.size, int(d.states[:, 0].max()) + 1)
        dv = np.zeros(n)
        dv[d.states[:, 0]] = d.values
        vv = np.zeros(n)
        vv[:v.size] = v
        S = np.arange(n)[:, None]
        return (dv, vv, S) if d is a else (vv, dv, S)
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    n = max(a.size, b.size)
    va, vb = np.zeros(n), np.zeros(n)
    va[:a.size] = a
    vb[:b.size] = b
    return va, vb, None


def distances(a, b, w=None) -> Distances:
    """Total variation, l1 and (optionally) w-norm distances between two zero-padded measures.

    ``a`` and ``b`` are distributions on truncations or vectors padded over
    ``0, 1, 2, ...``.  TV is the supremum over events, which for measures of
    unequal mass is the larger of the positive and negative parts of ``a - b``.
    ``w`` is a vectorised function of states, or a vector aligned with the
    common index set.
    """
    va, vb, S = _common_support(a, b)
    diff = va - vb
    tv = float(max(np.clip(diff, 0, None).sum(), np.clip(-diff, 0, None).sum()))
    l1 = float(np.abs(diff).sum())
    wn = None
    if w is not None:
        if callable(w):
            if S is None:
                S = np.arange(diff.size)[:, None]
            wv = np.asarray(w(S), dtype=float)
        else:
            wv = np.zeros(diff.size)
            wa = np.asarray(w, dtype=float).ravel()
            wv[:min(wa.size, diff.size)] = wa[:diff.size]
        wn = float((wv * np.abs(diff)).sum())
    return Distances(tv, l1, wn)


# --------------------------------------------------------------------------- truncation and bound errors


def tail_bound(w, c: float, r: float) -> float:
    """``m_r <= c/r``, given the certified moment bound ``pi(w) <= c`` and ``S_r = {w < r}``."""
    if not r > 0:
        raise ValueError("r must be positive")
    return float(c) / float(r)


def superlevel_tail_bound(r: float) -> float:
    """Tail bound ``1/(r+1)`` carried by the superlevel truncations built from a drift function."""
    if not r > 0:
        raise ValueError("r must be positive")
    return 1.0 / (r + 1.0)


def bound_errors(pair: BoundsPair, tail: Optional[float] = None) -> list:
    """Errors of statewise bounds ``l <= pi <= u`` on the truncation.

    The lower bound's TV and l1 errors are both exactly ``1 - l(S_r)``.  For
    the upper bound only brackets are available; they use
    ``max(0, 1 - u(S_r)) <= m_r <= tail``.
    """
    if pair.validity != "statewise":
        raise ValueError("error formulas need statewise-valid bounds")
    eps = pair.tail_bound if tail is None else float(tail)
    out = []
    if pair.lower is not None:
        e = 1.0 - pair.lower.mass
        out.append(ErrorEntry("lower_tv_error", e, RIGOROUS, "exact: 1 - l(S_r)"))
        out.append(ErrorEntry("lower_l1_error", e, RIGOROUS, "exact: 1 - l(S_r)"))
    uS = pair.upper.mass
    excess = uS - 1.0
    out.append(ErrorEntry("upper_tv_bracket_lo", abs(excess), RIGOROUS))
    out.append(ErrorEntry("upper_tv_bracket_hi", max(excess + eps, eps), RIGOROUS))
    out.append(ErrorEntry("upper_l1_bracket_lo", abs(excess), RIGOROUS))
    out.append(ErrorEntry("upper_l1_bracket_hi", excess + 2.0 * eps, RIGOROUS))
    return out


def bounds_report(pair: BoundsPair, scheme: str, tail: Optional[float] = None,
                  oracle=None) -> ErrorReport:
    """``ErrorReport`` for a bounds pair, with oracle errors when an oracle is supplied."""
    T = pair.truncation
    rep = ErrorReport(scheme, truncation_id(T))
    eps = pair.tail_bound if tail is None else float(tail)
    rep.add("tail_bound", eps, RIGOROUS, "m_r <= c/r")
    rep.extend(bound_errors(pair, eps))
    if oracle is not None:
        rep.add("tail_mass", oracle_tail_mass(T, oracle), ORACLE)
        if pair.lower is not None:
            rep.add("lower_tv_error_oracle", distances(pair.lower, oracle).tv, ORACLE)
        rep.add("upper_tv_error_oracle", distances(pair.upper, oracle).tv, ORACLE)
    return rep


def oracle_tail_mass(T: Truncation, oracle) -> float:
    """``1 - pi(S_r)`` for an oracle given as a distribution or a padded one-species vector."""
    if isinstance(oracle, TruncatedDistribution):
        return float(1.0 - oracle.at(T.states).sum())
    v = np.asarray(oracle, dtype=float).ravel()
    idx = T.states[:, 0]
    inside = idx < v.size
    return float(1.0 - v[idx[inside]].sum())


def _restrict(oracle, T: Truncation) -> np.ndarray:
    if isinstance(oracle, TruncatedDistribution):
        return oracle.at(T.states)
    v = np.asarray(oracle, dtype=float).ravel()
    if T.n_species != 1:
        raise ValueError("padded oracle vectors are one-species")
    idx = T.states[:, 0]
    out = np.zeros(len(T))
    inside = idx < v.size
    out[inside] = v[idx[inside]]
    return out


@dataclass(frozen=True)
class ConditionalMetrics:
    max_relative_error: float
    tv_error: float


def conditional_metrics(approx: TruncatedDistribution, oracle, T: Optional[Truncation] = None) -> ConditionalMetrics:
    """Maximum relative error ``max_x |approx - pi| / approx`` over T, and the TV error.

    The TV error of a normalised approximation on T is the tail mass plus the
    total underestimate on T.  A zero approximation where ``pi > 0`` gives an
    infinite relative error.
    """
    T = approx.truncation if T is None else T
    a = approx.values if T is approx.truncation else approx.at(T.states)
    p = _restrict(oracle, T)
    diff = np.abs(a - p)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(a > 0, diff / np.where(a > 0, a, 1.0), np.where(p > 0, np.inf, 0.0))
    m = oracle_tail_mass(T, oracle)
    tv = max(m + float(np.clip(p - a, 0, None).sum()), float(np.clip(a - p, 0, None).sum()))
    return ConditionalMetrics(float(rel.max()), tv)


def scheme_specific_error(approx: TruncatedDistribution, conditional: TruncatedDistribution) -> Distances:
    """Distance between an approximation and the conditional distribution on the same truncation."""
    return distances(approx, conditional)


def approximation_report(approx: TruncatedDistribution, scheme: str, tail: Optional[float] = None,
                         oracle=None, conditional: Optional[TruncatedDistribution] = None,
                         diagnostics: Optional[dict] = None) -> ErrorReport:
    """``ErrorReport`` for a single approximation (TA, LP, LDQBDP, ...)."""
    T = approx.truncation
    rep = ErrorReport(scheme, truncation_id(T))
    if tail is not None:
        rep.add("tail_bound", tail, RIGOROUS, "m_r <= c/r")
    if oracle is not None:
        m = oracle_tail_mass(T, oracle)
        rep.add("tail_mass", m, ORACLE)
        if conditional is None:
            cond = _restrict(oracle, T)
            conditional = TruncatedDistribution(T, cond / cond.sum())
        full = distances(approx, oracle)
        rep.add("full_tv_error", full.tv, ORACLE)
        rep.add("full_l1_error", full.l1, ORACLE)
    if conditional is not None:
        ss = scheme_specific_error(approx, conditional)
        rep.add("scheme_specific_l1", ss.l1, ORACLE)
        rep.add("scheme_specific_tv", ss.tv, ORACLE)
    elif tail is not None:
        # without the conditional, only the truncation part of the error can be bounded
        rep.add("full_tv_error_lo", None, HEURISTIC, "needs the conditional distribution or an oracle")
    for k, v in (diagnostics or {}).items():
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            rep.add(k, v, HEURISTIC)
    return rep


# --------------------------------------------------------------------------- residuals


def stationary_residual(net: ReactionNetwork, rho, states, scaled: bool = False) -> float:
    """``max |rho Q(x)|`` over ``states``.

    ``rho`` is a distribution on a truncation (zero elsewhere) or a vectorised
    function of states.  With ``scaled`` the residual is divided by the largest
    probability flux ``rho(x) q(x)`` over ``states``.
    """
    X = np.atleast_2d(np.asarray(states.states if isinstance(states, Truncation) else states, dtype=np.int64))
    if isinstance(rho, TruncatedDistribution):
        val = rho.at
    elif callable(rho):
        val = lambda Y: np.asarray(rho(Y), dtype=float)
    else:
        raise TypeError("rho must be a TruncatedDistribution or a function of states")
    A = net.propensities(X)
    live = net.nu.any(axis=1)
    out_flux = val(X) * A[:, live].sum(axis=1)
    inflow = np.zeros(X.shape[0])
    for j in np.flatnonzero(live):
        P = X - net.nu[j]
        ok = (P >= 0).all(axis=1)
        if not ok.any():
            continue
        a = net.propensities(P[ok])[:, j]
        inflow[ok] += val(P[ok]) * a
    res = inflow - out_flux
    r = float(np.abs(res).max(initial=0.0))
    if scaled:
        scale = float(out_flux.max(initial=0.0))
        return r / scale if scale > 0 else r
    return r


# --------------------------------------------------------------------------- drift certificates


class DriftError(ValueError):
    pass


@dataclass
class DriftCertificate:
    """``Qv <= d 1_F - f`` checked on a finite set.

    Consequences for any stationary distribution: ``pi(f) <= d`` and
    ``pi(F^c) <= 1 - 1/d``.
    """

    v: object
    f: object
    d: float
    F: np.ndarray  # states, (k, n)
    check_size: int
    max_residual: float
    note: str = FINITE_SET_NOTE
    meta: dict = field(default_factory=dict)

    @property
    def average_bound(self) -> float:
        return self.d

    @property
    def complement_bound(self) -> float:
        return 1.0 - 1.0 / self.d

    def report(self) -> ErrorReport:
        rep = ErrorReport("drift", f"check:{self.check_size}")
        rep.add("d", self.d, RIGOROUS, self.note)
        rep.add("average_f_upper", self.average_bound, RIGOROUS, self.note)
        rep.add("F_complement_upper", self.complement_bound, RIGOROUS, self.note)
        rep.add("max_residual", self.max_residual, HEURISTIC)
        return rep


def _states(X) -> np.ndarray:
    if isinstance(X, Truncation):
        return X.states
    return np.atleast_2d(np.asarray(X, dtype=np.int64))


def drift_apply(net: ReactionNetwork, v, f, F, check, d: Optional[float] = None,
                tol: float = DRIFT_TOL) -> DriftCertificate:
    """Check ``Qv <= d 1_F - f`` on ``check`` and return the certificate.

    ``F`` must lie inside the check set.  Without ``d`` the smallest constant
    that works on the check set, ``max_F (Qv + f)``, is used.  Off ``F`` the
    inequality reads ``Qv + f <= 0`` and no choice of ``d`` can repair it.
    """
    X = _states(check)
    Fs = _states(F)
    CT = Truncation(X.copy())
    inF = np.zeros(len(CT), dtype=bool)
    idx = CT.lookup(Fs)
    if np.any(idx < 0):
        raise DriftError("F must be contained in the check set")
    inF[idx] = True
    X = CT.states
    vf, ff = as_function(net, v), as_function(net, f)
    if np.any(vf(X) < 0):
        raise DriftError("v must be nonnegative")
    fv = ff(X)
    if np.any(fv < 1.0 - tol):
        raise DriftError("f must be at least 1")
    lhs = apply_generator(net, vf, X) + fv
    scale = np.maximum(1.0, np.abs(fv))
    off = ~inF
    if off.any():
        bad = off & (lhs > tol * scale)
        if bad.any():
            k = int(np.flatnonzero(bad)[np.argmax(lhs[bad])])
            raise DriftError(f"Qv + f = {lhs[k]:.6g} > 0 at {CT.state(k)} outside F; no d satisfies the inequality")
    d_min = float(lhs[inF].max())
    if d is None:
        d = d_min
    elif d < d_min - tol * max(1.0, abs(d_min)):
        raise DriftError(f"d = {d} is below the smallest feasible constant {d_min} on the check set")
    # raising d keeps the inequality valid and makes 1 - 1/d a meaningful tail bound
    d = max(d, 1.0)
    resid = lhs - d * inF
    return DriftCertificate(v, f, float(d), CT.states[inF], len(CT), float(resid.max()),
                            meta={"d_min": d_min})


def superlevel_certificate(net: ReactionNetwork, u, r: float, qu_max: float, check) -> DriftCertificate:
    """Drift certificate behind the superlevel truncations ``{Qu > -r qu_max}``.

    With ``v = u / (r qu_max)``, ``f = max(1, -Qu / (r qu_max))`` and ``F`` the
    superlevel set, the constant is ``d = (r + 1)/r`` whenever ``Qu`` attains
    ``qu_max`` on the check set.
    """
    if not qu_max > 0:
        raise ValueError("qu_max must be positive")
    uf = as_function(net, u)
    s = r * qu_max
    v = lambda X: uf(X) / s
    f = lambda X: np.maximum(1.0, -apply_generator(net, uf, X) / s)
    X = _states(check)
    F = X[apply_generator(net, uf, X) > -s]
    cert = drift_apply(net, v, f, F, X)
    cert.meta["d_theory"] = (r + 1.0) / r
    return cert


# --------------------------------------------------------------------------- computable TA error bounds


def _state_index(T: Truncation, z) -> int:
    if isinstance(z, (int, np.integer)) and T.n_species > 1:
        raise ValueError("give multi-species states as tuples")
    return T.index_of(np.atleast_1d(np.asarray(z, dtype=np.int64)))


def _F_indices(T: Truncation, F) -> np.ndarray:
    idx = T.lookup(_states(F))
    if np.any(idx < 0):
        raise ValueError("F must be contained in the truncation")
    return idx


def phi_columns(net: ReactionNetwork, T: Truncation, cols: np.ndarray, beta: float) -> np.ndarray:
    """Columns ``cols`` of ``(I - Q_r/beta)^{-1}`` (one factorization, one solve per column)."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    Qr = assemble_Qr(net, T)
    n = len(T)
    E = np.zeros((n, len(cols)))
    E[cols, np.arange(len(cols))] = 1.0
    if accurate_feasible(Qr):
        qo = jumps(net, T).out_rate
        return mmatrix_lu(Qr / beta, 1.0 + qo / beta).solve(E)
    M = csc_matrix(identity(n) - Qr / beta)
    return splu(M).solve(E)


def phi_bar(net: ReactionNetwork, T: Truncation, F, beta: float) -> float:
    """``max_x min_{y in F} phi(x, y)`` for ``phi = (I - Q_r/beta)^{-1}``."""
    Phi = phi_columns(net, T, _F_indices(T, F), beta)
    return float(Phi.min(axis=1).max())


def beta_grid(lo: float = 1e-2, hi: float = 1e3, n: int = 41) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def best_beta(net: ReactionNetwork, T: Truncation, F, betas: Optional[Sequence[float]] = None) -> tuple:
    """Grid search for the ``beta`` maximising ``beta * phi_bar``; returns ``(beta, phi_bar)``.

    The map is not concave in general, so every grid point is evaluated.
    """
    betas = beta_grid() if betas is None else np.asarray(betas, dtype=float)
    best = (float("nan"), -np.inf, 0.0)
    for b in betas:
        p = phi_bar(net, T, F, float(b))
        if b * p > best[1]:
            best = (float(b), b * p, p)
    return best[0], best[2]


def ta_outflow(net: ReactionNetwork, T: Truncation, z) -> float:
    """``O_r``: the rate at which the fixed-state TA solution leaks out of T."""
    from .scheme_ta import FixedState, build_augmented, ta_solve

    state = tuple(int(v) for v in np.atleast_1d(z))
    sys = build_augmented(net, T, FixedState(state))
    pi = ta_solve(sys)
    return float(pi.values @ sys.out_rate)


def liu_bound(net: ReactionNetwork, T: Truncation, z, cert: DriftCertificate, beta: float,
              outflow: Optional[float] = None, phibar: Optional[float] = None) -> float:
    """``(v(z) + d / (beta phi_bar)) O_r``, a bound on the TV error of the TA solution with re-entry at ``z``."""
    _F_indices(T, cert.F)
    p = phi_bar(net, T, cert.F, beta) if phibar is None else float(phibar)
    if not p > 0:
        raise ValueError("phi_bar is not positive at this truncation; the bound does not apply")
    O = ta_outflow(net, T, z) if outflow is None else float(outflow)
    zv = float(as_function(net, cert.v)(np.atleast_2d(np.asarray(z, dtype=np.int64)))[0])
    return (zv + cert.d / (beta * p)) * O


@dataclass
class TightenedBound:
    bound: float
    naive: float
    c_r: float
    w: np.ndarray  # modified Lyapunov values on F_o
    e: float
    F_inner: np.ndarray  # states of F_o
    meta: dict = field(default_factory=dict)


def inner_set(net: ReactionNetwork, F) -> np.ndarray:
    """States of ``F`` from which no single jump leaves ``F``."""
    Fs = _states(F)
    FT = Truncation(Fs.copy())
    keep = np.ones(len(FT), dtype=bool)
    A = net.propensities(FT.states)
    for j in range(net.n_reactions):
        if not net.nu[j].any():
            continue
        live = A[:, j] > 0
        keep &= ~(live & (FT.lookup(FT.states + net.nu[j]) < 0))
    return FT.states[keep]


def tighten_bound_lp(net: ReactionNetwork, T: Truncation, z, cert: DriftCertificate, beta: float,
                     phibar: Optional[float] = None, outflow: Optional[float] = None) -> TightenedBound:
    """Refine the bound by re-optimising the Lyapunov values on ``F_o`` (states that cannot leave F in one jump).

    The program is ``min 1_{F_o}(z) w(z) + e/(beta phi_bar)`` over ``w >= 0``
    and free ``e`` subject to ``Q v~ (x) <= e - 1`` for ``x`` in ``F``, where
    ``v~`` is ``w`` on ``F_o`` and ``v`` elsewhere.  ``(v|F_o, d)`` is feasible,
    so the refined bound never exceeds the naive one.  The inequality is not
    re-checked off ``F``; for chains where states outside ``F`` jump straight
    into ``F_o`` (not the case for birth-death chains) that needs care.
    """
    Fs = _states(cert.F)
    _F_indices(T, Fs)
    p = phi_bar(net, T, Fs, beta) if phibar is None else float(phibar)
    if not p > 0:
        raise ValueError("phi_bar is not positive at this truncation; the bound does not apply")
    O = ta_outflow(net, T, z) if outflow is None else float(outflow)
    vf = as_function(net, cert.v)
    zs = np.atleast_2d(np.asarray(z, dtype=np.int64))
    zv = float(vf(zs)[0])
    naive = (zv + cert.d / (beta * p)) * O

    inner = inner_set(net, Fs)
    IT = Truncation(inner.copy()) if len(inner) else None
    k = len(inner)
    FT = Truncation(Fs.copy())
    X = FT.states
    A = net.propensities(X)
    vx = vf(X)
    pos_x = IT.lookup(X) if IT is not None else np.full(len(X), -1)
    # row x: sum_j a_j(x) (v~(x + nu_j) - v~(x)) - e <= -1
    M = np.zeros((len(X), k + 1))
    rhs = np.full(len(X), -1.0)
    for j in range(net.n_reactions):
        if not net.nu[j].any():
            continue
        a = A[:, j]
        Y = X + net.nu[j]
        pos_y = IT.lookup(Y) if IT is not None else np.full(len(X), -1)
        live = a > 0
        iy = live & (pos_y >= 0)
        M[np.flatnonzero(iy), pos_y[iy]] += a[iy]
        oy = live & (pos_y < 0)
        if oy.any():
            rhs[oy] -= a[oy] * vf(Y[oy])
        ix = live & (pos_x >= 0)
        M[np.flatnonzero(ix), pos_x[ix]] -= a[ix]
        ox = live & (pos_x < 0)
        rhs[ox] += a[ox] * vx[ox]
    M[:, k] = -1.0
    cost = np.zeros(k + 1)
    cost[k] = 1.0 / (beta * p)
    z_inner = IT.lookup(zs)[0] if IT is not None else -1
    if z_inner >= 0:
        cost[z_inner] = 1.0
    lb = np.zeros(k + 1)
    lb[k] = -np.inf
    lp = LinearProgram(cost, M, (LE,) * len(X), rhs, lb=lb, sense="min")
    sol = SimplexSolver(lp).solve()
    if not sol.optimal:
        raise ArithmeticError(f"refinement LP ended {sol.status}; (v, d) should have been feasible")
    c_r = float(sol.objective)
    refined = (c_r if z_inner >= 0 else zv + c_r) * O
    # both numbers are valid bounds; solver round-off must not make the refinement worse
    bound = min(refined, naive)
    return TightenedBound(bound, naive, c_r, sol.x[:k], float(sol.x[k]), inner,
                          {"phi_bar": p, "outflow": O, "lp_value": refined, "beta": beta})
