"""LP and ILP schemes over the outer polytope of truncated stationary solutions.

The polytope holds every nonnegative vector on the truncation that satisfies
the stationary equations at interior states (states no outside jump can land
on), carries mass in ``[1 - c/r, 1]`` and respects the moment bound
``sum w pi <= c``.  The restriction of any stationary distribution lies in it.

Variables are scaled, ``sigma(x) = max(q(x), 1) pi(x)``, so that columns of
very different exit rates have comparable size.

The stationary equations come in two equivalent forms.  The *balance* form
has one row per interior state and stores ``-q(x)`` on the diagonal.  The
*cut* form replaces row ``k`` by the sum of the balance rows of the first
``k + 1`` interior states, i.e. flux into that set equals flux out of it, so
every coefficient is a sum of rates of one sign.  The feasible set is the
same.  On nearly decomposable chains the rounding in the balance diagonal
alone moves mass between modes far beyond the working precision, and a
residual tolerance on balance rows cannot tell the right vertex from a wrong
one; the cut form does not have that problem.

The cut form is as sparse as the balance form for one-species chains but
fills in with the bandwidth otherwise.  ``form="auto"`` runs the simplex on
the cut form when it is not denser, and otherwise on the balance form with
each optimal vertex recomputed ("polished") from its basis in cut form.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, diags, vstack
from scipy.sparse.linalg import splu

from .distribution import BoundsPair, TruncatedDistribution
from .lpsolve import _BASIC as _BASIC_STATUS
from .lpsolve import EQ, GE, LE, OPTIMAL, LinearProgram, LPSolution, SimplexSolver
from .model import ReactionNetwork
from .numlin import assemble_Qr, scale_factors
from .scheme_ita import MarginalBounds
from .statespace import Truncation, as_function, interior_set, jumps

CERT_TOL = 1e-9
FORMS = ("auto", "cut", "balance")
SUPPORT_TOL = 1e-10


class PolytopeError(ValueError):
    pass


class LPSchemeError(ArithmeticError):
    def __init__(self, message: str, solution: Optional[LPSolution] = None):
        super().__init__(message)
        self.solution = solution


@dataclass
class OuterPolytope:
    truncation: Truncation
    w: np.ndarray
    c: float
    r: float
    interior: np.ndarray
    lp: LinearProgram
    scale: np.ndarray  # max(q, 1); pi = sigma / scale
    cut: Optional[csr_matrix] = None  # cut-form rows for polishing a balance-form vertex
    net: Optional[ReactionNetwork] = field(default=None, repr=False)
    form: str = "balance"
    _solver: Optional[SimplexSolver] = field(default=None, repr=False)

    @property
    def n_equalities(self) -> int:
        return int(self.interior.size)

    @property
    def solver(self) -> SimplexSolver:
        if self._solver is None:
            self._solver = SimplexSolver(self.lp)
        return self._solver

    def objective(self, f) -> np.ndarray:
        """Cost vector in scaled variables for ``pi(f) = sum f(x) pi(x)``."""
        f = np.asarray(f, dtype=float)
        if f.shape != (len(self.truncation),):
            raise ValueError("objective must give one value per truncation state")
        return f / self.scale

    def violation(self, pi: np.ndarray) -> float:
        """Largest constraint violation of an (unscaled) vector on the truncation."""
        return self.lp.violation(np.asarray(pi, dtype=float) * self.scale)

    def unscale(self, sigma: np.ndarray) -> np.ndarray:
        return np.maximum(sigma, 0.0) / self.scale


def cut_rows(net: ReactionNetwork, T: Truncation, interior: np.ndarray) -> csr_matrix:
    """Cumulative balance rows: row k is ``flux into S_k - flux out of S_k`` for ``S_k`` = first k+1 interior states."""
    J = jumps(net, T)
    n = len(T)
    m = interior.size
    pos = np.full(n, m, dtype=np.int64)  # position in the interior order; m for "never inside"
    pos[interior] = np.arange(m)
    y, j = np.nonzero(J.A > 0)
    a = J.A[y, j]
    t = J.target[y, j]
    pt = np.where(t >= 0, pos[np.maximum(t, 0)], m)
    py = pos[y]
    keep = pt != py
    y, a, pt, py = y[keep], a[keep], pt[keep], py[keep]
    leaving = pt > py  # y lies in S_k and jumps out of it for k in [py, pt)
    lo = np.where(leaving, py, pt)
    hi = np.where(leaving, pt, py)
    sign = np.where(leaving, -1.0, 1.0)
    length = hi - lo
    offsets = np.arange(length.sum()) - np.repeat(np.cumsum(length) - length, length)
    rows = np.repeat(lo, length) + offsets
    M = coo_matrix((np.repeat(sign * a, length), (rows, np.repeat(y, length))), shape=(m, n)).tocsr()
    M.sum_duplicates()
    return M


def build_polytope(net: ReactionNetwork, T: Truncation, w, c: float, r: Optional[float] = None,
                   form: str = "auto", polish: bool = True) -> OuterPolytope:
    """Assemble the outer polytope in scaled variables."""
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}")
    r = T.r if r is None else r
    if r is None:
        raise PolytopeError("truncation level r is unknown")
    if r <= c:
        raise PolytopeError(f"mass window [1 - c/r, 1] is empty or trivial for r={r}, c={c}")
    wv = np.asarray(as_function(net, w)(T.states) if not isinstance(w, np.ndarray) else w, dtype=float)
    s = scale_factors(net, T)
    N = interior_set(net, T)
    Dinv = diags(1.0 / s)
    balance = csr_matrix(assemble_Qr(net, T).T.tocsr()[N] @ Dinv)
    cut = csr_matrix(cut_rows(net, T, N) @ Dinv)
    if form == "auto":
        form = "cut" if cut.nnz <= balance.nnz else "balance"
    S = cut if form == "cut" else balance
    A = vstack([S, csr_matrix(1.0 / s), csr_matrix(1.0 / s), csr_matrix(wv / s)]).tocsr()
    rel = [EQ] * N.size + [LE, GE, LE]
    b = np.concatenate([np.zeros(N.size), [1.0, 1.0 - c / r, c]])
    lp = LinearProgram(1.0 / s, A, rel, b, sense="max")
    keep_cut = cut if (form == "balance" and polish) else None
    return OuterPolytope(T, wv, float(c), float(r), N, lp, s, keep_cut, net, form)


def polish_vertex(poly: OuterPolytope, sol: LPSolution) -> Optional[np.ndarray]:
    """Recompute the optimal vertex from its basis using the cut-form equations.

    Returns None when the basis does not pin down a unique vertex this way.
    """
    if poly.cut is None or poly.net is None or sol.basis is None:
        return None
    n = poly.lp.n_vars
    m_eq = poly.interior.size
    A = poly.lp.A
    basic = np.asarray(sol.basis.basic)
    status = np.asarray(sol.basis.status)
    cols = np.sort(basic[basic < n])
    m = A.shape[0]
    # equality rows whose slack or artificial is basic are left out of the basis system
    free = np.zeros(m, dtype=bool)
    extra = basic[basic >= n]
    free[np.where(extra < n + m, extra - n, extra - n - m)] = True
    dropped = np.flatnonzero(free[:m_eq])
    if dropped.size:
        # nest the dropped states last so the leading cut rows only combine rows the basis uses
        keep = np.ones(m_eq, dtype=bool)
        keep[dropped] = False
        order = np.concatenate([poly.interior[keep], poly.interior[dropped]])
        cut = csr_matrix(cut_rows(poly.net, poly.truncation, order) @ diags(1.0 / poly.scale))[: keep.sum()]
    else:
        cut = poly.cut
    # inequality rows whose slack is nonbasic are active
    ineq = np.arange(m_eq, m)
    active = ineq[status[n + ineq] != _BASIC_STATUS]
    # nonbasic structurals sit at their (zero) lower bound
    if np.any(poly.lp.lb != 0):
        return None
    rows = vstack([cut[:, cols], A[active][:, cols]]).tocsc()
    rhs = np.concatenate([np.zeros(cut.shape[0]), poly.lp.b[active]])
    if rows.shape[0] < rows.shape[1]:
        return None
    if rows.shape[0] == rows.shape[1]:
        try:
            xb = splu(rows).solve(rhs)
        except RuntimeError:
            return None
    else:
        xb, *_ = np.linalg.lstsq(rows.toarray(), rhs, rcond=None)
    if not np.all(np.isfinite(xb)):
        return None
    x = np.zeros(n)
    x[cols] = xb
    scale = max(1.0, float(np.abs(x).max()))
    if np.any(x < -1e-9 * scale):
        return None
    x[x < 0] = 0.0
    if poly.lp.violation(x) > max(1e-8, 10 * sol.max_violation):
        return None
    return x


def _optimize(poly: OuterPolytope, cost: np.ndarray, sense: str, warm=None) -> LPSolution:
    sol = poly.solver.solve(c=cost, sense=sense, warm=warm)
    if sol.status == OPTIMAL:
        x = polish_vertex(poly, sol)
        if x is not None:
            sol.x = x
            sol.objective = float(cost @ x)
            sol.message = "vertex polished in cut form"
    return sol


def _raise_for(sol: LPSolution, what: str):
    if sol.status == OPTIMAL:
        return
    if sol.status == "unbounded":
        raise LPSchemeError(f"{what}: unbounded, which the mass window should rule out (internal error)", sol)
    raise LPSchemeError(f"{what}: {sol.status} ({sol.message})", sol)


def lp_approximate(poly: OuterPolytope) -> TruncatedDistribution:
    """An optimal point of ``max pi(S_r)`` over the polytope."""
    sol = _optimize(poly, poly.objective(np.ones(len(poly.truncation))), "max")
    _raise_for(sol, "mass LP")
    pi = poly.unscale(sol.x)
    return TruncatedDistribution(poly.truncation, pi, {"scheme": "lp", "objective": sol.objective,
                                                       "iterations": sol.iterations,
                                                       "max_violation": sol.max_violation,
                                                       "form": poly.form, "polished": sol.message.startswith("vertex")})


@dataclass
class ProbeResult:
    distribution: TruncatedDistribution
    support: list


def lp_ergodic_probe(poly: OuterPolytope, state) -> ProbeResult:
    """Maximize ``pi(x)`` and report the support of the optimum, a hint about the closed class of x."""
    T = poly.truncation
    k = T.index_of(state)
    f = np.zeros(len(T))
    f[k] = 1.0
    sol = _optimize(poly, poly.objective(f), "max")
    _raise_for(sol, f"probe at {tuple(state)}")
    pi = poly.unscale(sol.x)
    support = [T.state(i) for i in np.flatnonzero(pi > SUPPORT_TOL)]
    return ProbeResult(TruncatedDistribution(T, pi, {"scheme": "lp-probe", "state": tuple(state)}), support)


@dataclass
class StationaryBoundsReport:
    names: list
    lower: np.ndarray
    upper: np.ndarray
    unique_certificate: bool
    failures: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ok = np.isfinite(self.lower) & np.isfinite(self.upper)
        if np.any(self.lower[ok] > self.upper[ok] + 1e-9):
            raise ValueError("a lower bound exceeds its upper bound")


def _bound_chain(poly: OuterPolytope, costs: list, start: int) -> list:
    out = []
    warm = None
    for k, cost in enumerate(costs):
        pair = []
        for sense in ("min", "max"):
            sol = _optimize(poly, cost, sense, warm)
            if sol.status == OPTIMAL:
                warm = sol.basis
                pair.append((sol.objective, None))
            else:
                pair.append((np.nan, f"{sense}: {sol.status} {sol.message}".strip()))
        out.append((start + k, pair))
    return out


def ilp_bounds(poly: OuterPolytope, objectives: Sequence, names: Optional[Sequence[str]] = None,
               threads: int = 1) -> StationaryBoundsReport:
    """``inf`` and ``sup`` of ``pi(f)`` over the polytope for every objective ``f``.

    Each chunk of objectives is solved in order, every solve warm-started from
    the previous optimal basis.  Failures are recorded per objective.
    """
    costs = [poly.objective(f) for f in objectives]
    names = list(names) if names is not None else [f"f{k}" for k in range(len(costs))]
    k = len(costs)
    threads = max(1, min(int(threads), k)) if k else 1
    bounds = np.linspace(0, k, threads + 1).astype(int)
    chunks = [(bounds[i], costs[bounds[i]:bounds[i + 1]]) for i in range(threads)]
    if threads == 1:
        results = [_bound_chain(poly, chunks[0][1], 0)] if k else []
    else:
        # each chunk gets its own solver so warm starts do not interfere
        def run(args):
            start, cs = args
            local = OuterPolytope(poly.truncation, poly.w, poly.c, poly.r, poly.interior, poly.lp, poly.scale,
                                  poly.cut, poly.net, poly.form)
            return _bound_chain(local, cs, start)

        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, chunks))
    lower = np.full(k, np.nan)
    upper = np.full(k, np.nan)
    failures = {}
    for chunk in results:
        for idx, ((lo, e1), (hi, e2)) in chunk:
            lower[idx], upper[idx] = lo, hi
            errs = [e for e in (e1, e2) if e]
            if errs:
                failures[names[idx]] = "; ".join(errs)
    cert = bool(np.any(lower[np.isfinite(lower)] > CERT_TOL))
    return StationaryBoundsReport(names, lower, upper, cert, failures, {"scheme": "ilp", "form": poly.form})


def statewise_objectives(T: Truncation) -> list:
    n = len(T)
    return [np.eye(1, n, k).ravel() for k in range(n)]


def ilp_statewise_bounds(poly: OuterPolytope, threads: int = 1) -> tuple:
    """Statewise bounds as a ``BoundsPair`` together with the raw report."""
    T = poly.truncation
    rep = ilp_bounds(poly, statewise_objectives(T), [str(T.state(k)) for k in range(len(T))], threads)
    if rep.failures:
        raise LPSchemeError(f"{len(rep.failures)} statewise programs failed, e.g. {next(iter(rep.failures.items()))}")
    lo = np.clip(rep.lower, 0.0, None)
    hi = np.maximum(np.clip(rep.upper, 0.0, None), lo)
    pair = BoundsPair(TruncatedDistribution(T, lo), TruncatedDistribution(T, hi), poly.c / poly.r, "statewise",
                      {"scheme": "ilp", "unique_certificate": rep.unique_certificate})
    return pair, rep


def ilp_marginal_bounds(poly: OuterPolytope, species: int, threads: int = 1) -> tuple:
    T = poly.truncation
    counts = T.states[:, species]
    idx = np.unique(counts)
    objs = [(counts == i).astype(float) for i in idx]
    rep = ilp_bounds(poly, objs, [f"x{species}={i}" for i in idx], threads)
    if rep.failures:
        raise LPSchemeError(f"{len(rep.failures)} marginal programs failed")
    lo = np.clip(rep.lower, 0.0, None)
    hi = np.maximum(np.clip(rep.upper, 0.0, None), lo)
    return MarginalBounds(idx, lo, hi, species, poly.c / poly.r, {"scheme": "ilp"}), rep
