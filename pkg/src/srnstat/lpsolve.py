"""A bounded-variable revised simplex method.

The solver works on ``A x (<=|=|>=) b, lb <= x <= ub`` after Ruiz equilibration.
Phase I drives artificial variables to zero.  Phase II prices with Dantzig's
rule (lowest index on ties) and falls back to Bland's rule after a long run
of degenerate pivots.  The basis inverse is an LU factorization plus a short
product-form eta file, refactored periodically.

A ``SimplexSolver`` keeps the preprocessed constraints, so repeated solves
with different objectives can start from the previous optimal basis.  The
stationary-bounds scheme relies on that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import csc_matrix, csr_matrix, hstack, identity, issparse
from scipy.sparse.linalg import splu

LE, EQ, GE = "<=", "=", ">="

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"

_AT_LOWER, _AT_UPPER, _FREE, _BASIC = 0, 1, 2, 3
_OBJECTIVE_RESCALES = 6
_REL_PIVOT_TOL = 1e-13
_MAX_OBJECTIVE_WEIGHT = 1e30


@dataclass
class LinearProgram:
    """``optimize c.x`` subject to row constraints and variable bounds."""

    c: np.ndarray
    A: csr_matrix
    relations: tuple
    b: np.ndarray
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    sense: str = "min"

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        if n == 0:
            raise ValueError("a linear program needs at least one variable")
        A = self.A if issparse(self.A) else csr_matrix(np.atleast_2d(np.asarray(self.A, dtype=float)).reshape(-1, n))
        self.A = csr_matrix(A, dtype=float)
        if self.A.shape[1] != n:
            raise ValueError("constraint matrix width does not match the objective")
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.relations = tuple(self.relations)
        if len(self.relations) != self.A.shape[0] or self.b.size != self.A.shape[0]:
            raise ValueError("constraint rows, relations and right-hand sides disagree in length")
        if any(r not in (LE, EQ, GE) for r in self.relations):
            raise ValueError("relations must be '<=', '=' or '>='")
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).copy()
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        for arr in (self.c, self.A.data, self.b):
            if not np.all(np.isfinite(arr)):
                raise ValueError("coefficients must be finite")
        if np.any(self.lb > self.ub):
            raise ValueError("variable with empty bound interval")

    @property
    def n_vars(self) -> int:
        return self.c.size

    @classmethod
    def from_rows(cls, c, rows: Sequence, sense: str = "min", lb=None, ub=None):
        """Build from ``rows = [(coeffs, relation, rhs), ...]``; coeffs is a dict ``{j: a_j}`` or a dense vector."""
        n = len(c)
        data, ri, ci, rels, rhs = [], [], [], [], []
        for i, (coeffs, rel, val) in enumerate(rows):
            items = coeffs.items() if isinstance(coeffs, dict) else enumerate(np.asarray(coeffs, dtype=float))
            for j, a in items:
                if a != 0:
                    data.append(float(a))
                    ri.append(i)
                    ci.append(int(j))
            rels.append(rel)
            rhs.append(float(val))
        A = csr_matrix((data, (ri, ci)), shape=(len(rows), n))
        return cls(np.asarray(c, dtype=float), A, tuple(rels), np.array(rhs), lb, ub, sense)

    def violation(self, x: np.ndarray) -> float:
        """Largest violation of any row or bound at ``x``."""
        Ax = self.A @ x
        v = 0.0
        rel = np.array(self.relations)
        d = Ax - self.b
        if d.size:
            v = max(v, float(np.max(np.where(rel == LE, np.maximum(d, 0), 0), initial=0)))
            v = max(v, float(np.max(np.where(rel == GE, np.maximum(-d, 0), 0), initial=0)))
            v = max(v, float(np.max(np.where(rel == EQ, np.abs(d), 0), initial=0)))
        v = max(v, float(np.max(np.maximum(self.lb - x, 0))), float(np.max(np.maximum(x - self.ub, 0))))
        return v


@dataclass
class Basis:
    """Snapshot of a simplex basis usable as a warm start for the same constraints."""

    basic: np.ndarray
    status: np.ndarray


@dataclass
class LPSolution:
    status: str
    x: Optional[np.ndarray] = None
    objective: float = float("nan")
    max_violation: float = float("nan")
    duals: Optional[np.ndarray] = None
    iterations: int = 0
    message: str = ""
    basis: Optional[Basis] = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def ruiz_scaling(A: csr_matrix, iters: int = 20, tol: float = 1e-3):
    """Row and column factors ``r, s`` such that ``diag(r) A diag(s)`` has entries of magnitude about one."""
    m, n = A.shape
    r = np.ones(m)
    s = np.ones(n)
    M = abs(csr_matrix(A))
    for _ in range(iters):
        S = csr_matrix(M.multiply(r[:, None]).multiply(s[None, :]))
        rmax = S.max(axis=1).toarray().ravel()
        cmax = S.max(axis=0).toarray().ravel()
        rmax[rmax == 0] = 1.0
        cmax[cmax == 0] = 1.0
        r /= np.sqrt(rmax)
        s /= np.sqrt(cmax)
        if np.all(np.abs(1 - rmax) < tol) and np.all(np.abs(1 - cmax) < tol):
            break
    return r, s


class _BasisInverse:
    """LU of the basis matrix plus an eta file."""

    def __init__(self, A: csc_matrix, basic: np.ndarray):
        self.lu = splu(csc_matrix(A[:, basic]), permc_spec="COLAMD", diag_pivot_thresh=0.1)
        self.etas: list = []

    def ftran(self, a: np.ndarray) -> np.ndarray:
        v = self.lu.solve(a)
        for r, alpha in self.etas:
            vr = v[r] / alpha[r]
            v -= alpha * vr
            v[r] = vr
        return v

    def btran(self, c: np.ndarray) -> np.ndarray:
        z = c.copy()
        for r, alpha in reversed(self.etas):
            zr = z[r]
            z[r] = (zr - (alpha @ z - alpha[r] * zr)) / alpha[r]
        return self.lu.solve(z, trans="T")

    def update(self, r: int, alpha: np.ndarray):
        self.etas.append((r, alpha.copy()))


class SimplexSolver:
    """Preprocessed constraint system that can be optimized for many objectives."""

    def __init__(self, p: LinearProgram, feas_tol: float = 1e-9, opt_tol: float = 1e-9,
                 pivot_tol: float = 1e-9, refactor_every: int = 64, max_iter: Optional[int] = None):
        self.p = p
        self.feas_tol = feas_tol
        self.opt_tol = opt_tol
        self.pivot_tol = pivot_tol
        self.refactor_every = refactor_every
        m, n = p.A.shape
        self.m, self.n = m, n
        self.max_iter = max_iter if max_iter is not None else 50 * (m + n) + 1000
        if m:
            rs, cs = ruiz_scaling(p.A)
        else:
            rs, cs = np.ones(0), np.ones(n)
        self.row_scale, self.col_scale = rs, cs
        As = csr_matrix(p.A.multiply(rs[:, None]).multiply(cs[None, :]))
        self.b = p.b * rs
        # slack s with A x + s = b: '<=' gives s >= 0, '>=' gives s <= 0, '=' gives s = 0
        rel = np.array(p.relations)
        slack_lb = np.where(rel == GE, -np.inf, 0.0)
        slack_ub = np.where(rel == LE, np.inf, 0.0)
        with np.errstate(invalid="ignore"):
            lb = np.where(np.isfinite(p.lb), p.lb / cs, p.lb)
            ub = np.where(np.isfinite(p.ub), p.ub / cs, p.ub)
        self.n_struct = n
        self.n_slack = m
        # artificial columns are filled in at cold start; they live at [n+m, n+2m)
        self.art_sign = np.ones(m)
        self.A_core = hstack([As, identity(m, format="csr")], format="csc") if m else csc_matrix(As)
        self.lb = np.concatenate([lb, slack_lb, np.zeros(m)])
        self.ub = np.concatenate([ub, slack_ub, np.zeros(m)])
        self._build_full()

    def _build_full(self):
        m = self.m
        if m:
            art = csc_matrix((self.art_sign, (np.arange(m), np.arange(m))), shape=(m, m))
            self.A = hstack([self.A_core, art], format="csc")
        else:
            self.A = self.A_core
        self.AT = csr_matrix(self.A.T)
        self.N = self.A.shape[1]

    # ------------------------------------------------------------------ helpers

    def _initial_status(self, lb, ub):
        st = np.where(np.isfinite(lb), _AT_LOWER, np.where(np.isfinite(ub), _AT_UPPER, _FREE))
        return st.astype(np.int8)

    def _nonbasic_x(self, status):
        x = np.zeros(self.N)
        lo = status == _AT_LOWER
        hi = status == _AT_UPPER
        x[lo] = self.lb[lo]
        x[hi] = self.ub[hi]
        return x

    def _recompute_basic(self, binv, basic, status, x):
        xn = np.where(status == _BASIC, 0.0, x)
        rhs = self.b - self.A @ xn
        x[basic] = binv.ftran(rhs)
        return x

    # ------------------------------------------------------------------ core loop

    def _iterate(self, cost, basic, status, x, lb, ub, iter_budget):
        """Primal simplex from a feasible basis. Returns (status string, binv, basic, status, x, iterations)."""
        m = self.m
        binv = _BasisInverse(self.A, basic)
        x = self._recompute_basic(binv, basic, status, x)
        degenerate_run = 0
        bland = False
        bland_after = 10 * (m + self.N)
        its = 0
        while True:
            if its >= iter_budget:
                return "iteration_limit", binv, basic, status, x, its
            if len(binv.etas) >= self.refactor_every:
                try:
                    binv = _BasisInverse(self.A, basic)
                except RuntimeError:
                    return NUMERICAL_FAILURE, binv, basic, status, x, its
                x = self._recompute_basic(binv, basic, status, x)
            y = binv.btran(cost[basic])
            d = cost - self.AT @ y
            movable = lb < ub
            elig = movable & (
                ((status == _AT_LOWER) & (d < -self.opt_tol))
                | ((status == _AT_UPPER) & (d > self.opt_tol))
                | ((status == _FREE) & (np.abs(d) > self.opt_tol))
            )
            cand = np.flatnonzero(elig)
            if cand.size == 0:
                return OPTIMAL, binv, basic, status, x, its
            if bland:
                j = int(cand[0])
            else:
                j = int(cand[np.argmax(np.abs(d[cand]))])
            direction = 1.0 if d[j] < 0 else -1.0
            a_j = self.A[:, j].toarray().ravel()
            alpha = binv.ftran(a_j)
            # basic variables move by -direction * alpha * t
            delta = -direction * alpha
            xb = x[basic]
            lbB = lb[basic]
            ubB = ub[basic]
            # ignore entries that are tiny next to the column: pivoting on them wrecks the basis
            ptol = max(self.pivot_tol, _REL_PIVOT_TOL * np.abs(delta).max(initial=0.0))
            dec = delta < -ptol
            inc = delta > ptol
            with np.errstate(divide="ignore", invalid="ignore"):
                # Harris pass 1: largest step with bounds relaxed by the feasibility tolerance
                lim = np.full(m, np.inf)
                lim[dec] = (xb[dec] - lbB[dec] + self.feas_tol) / -delta[dec]
                lim[inc] = (ubB[inc] - xb[inc] + self.feas_tol) / delta[inc]
            t_flip = ub[j] - lb[j]
            t_max = lim.min() if m else np.inf
            if not np.isfinite(t_max) and not np.isfinite(t_flip):
                return UNBOUNDED, binv, basic, status, x, its
            if t_flip <= t_max:
                t = t_flip
                leave = -1
            else:
                with np.errstate(divide="ignore", invalid="ignore"):
                    exact = np.full(m, np.inf)
                    exact[dec] = (xb[dec] - lbB[dec]) / -delta[dec]
                    exact[inc] = (ubB[inc] - xb[inc]) / delta[inc]
                ok = np.flatnonzero(exact <= t_max)
                if bland:
                    best = exact[ok].min()
                    ties = ok[exact[ok] <= best + 1e-12]
                    leave = int(ties[np.argmin(basic[ties])])
                else:
                    leave = int(ok[np.argmax(np.abs(delta[ok]))])
                t = max(exact[leave], 0.0)
            its += 1
            if t <= 1e-12:
                degenerate_run += 1
                if degenerate_run > bland_after:
                    bland = True
            else:
                degenerate_run = 0
                bland = False
            x[basic] += delta * t
            x[j] += direction * t
            if leave < 0:
                status[j] = _AT_UPPER if direction > 0 else _AT_LOWER
                x[j] = ub[j] if direction > 0 else lb[j]
                continue
            out = basic[leave]
            hit_lower = delta[leave] < 0
            if not np.isfinite(lb[out]) and not np.isfinite(ub[out]):
                status[out] = _FREE
            else:
                status[out] = _AT_LOWER if (hit_lower and np.isfinite(lb[out])) or not np.isfinite(ub[out]) else _AT_UPPER
            x[out] = lb[out] if status[out] == _AT_LOWER else ub[out] if status[out] == _AT_UPPER else 0.0
            basic[leave] = j
            status[j] = _BASIC
            binv.update(leave, alpha)

    # ------------------------------------------------------------------ public

    def solve(self, c: Optional[np.ndarray] = None, sense: Optional[str] = None,
              warm: Optional[Basis] = None) -> LPSolution:
        p = self.p
        c = p.c if c is None else np.asarray(c, dtype=float)
        sense = p.sense if sense is None else sense
        sgn = 1.0 if sense == "min" else -1.0
        cost = np.zeros(self.N)
        cost[: self.n] = sgn * c * self.col_scale
        m = self.m
        total_its = 0
        lb, ub = self.lb.copy(), self.ub.copy()

        basic = status = x = None
        if warm is not None:
            basic, status, x = self._try_warm(warm)
        if basic is None:
            res = self._phase_one()
            if isinstance(res, LPSolution):
                return res
            basic, status, x, total_its = res

        budget = self.max_iter
        # Reduced costs are compared with an absolute tolerance, so an objective
        # whose values are tiny would look optimal everywhere.  Keep the current
        # objective value near one and re-optimize whenever it drifts small.
        cmax = np.abs(cost).max(initial=0.0)
        weight = 1.0 / cmax if cmax > 0 else 1.0
        for _ in range(_OBJECTIVE_RESCALES):
            val = abs(float(cost @ x)) * weight
            if 0.0 < val < 0.5:
                weight = weight / val if val > weight / _MAX_OBJECTIVE_WEIGHT else _MAX_OBJECTIVE_WEIGHT
            state, binv, basic, status, x, its = self._iterate(cost * weight, basic, status, x, lb, ub, budget)
            total_its += its
            budget -= its
            if state != OPTIMAL:
                break
            val = abs(float(cost @ x)) * weight
            if val == 0.0 or val >= 0.5 or weight >= _MAX_OBJECTIVE_WEIGHT:
                break
        if state == UNBOUNDED:
            return LPSolution(UNBOUNDED, iterations=total_its, message="objective unbounded along an edge")
        if state != OPTIMAL:
            return LPSolution(NUMERICAL_FAILURE, iterations=total_its, message=f"phase II stopped: {state}")
        return self._finish(binv, basic, status, x, cost, sgn, c, total_its)

    def _try_warm(self, warm: Basis):
        basic = np.array(warm.basic, dtype=np.int64).copy()
        status = np.array(warm.status, dtype=np.int8).copy()
        if basic.size != self.m or status.size != self.N:
            return None, None, None
        try:
            binv = _BasisInverse(self.A, basic)
        except RuntimeError:
            return None, None, None
        x = self._nonbasic_x(status)
        x = self._recompute_basic(binv, basic, status, x)
        xb = x[basic]
        if np.any(xb < self.lb[basic] - self.feas_tol) or np.any(xb > self.ub[basic] + self.feas_tol):
            return None, None, None
        return basic, status, x

    def _phase_one(self):
        m = self.m
        p_lb = self.lb.copy()
        p_ub = self.ub.copy()
        n_ns = self.n + m  # structural plus slack
        status = self._initial_status(p_lb, p_ub)
        x = self._nonbasic_x(status)
        res = self.b - self.A_core @ x[:n_ns]
        self.art_sign = np.where(res >= 0, 1.0, -1.0)
        self._build_full()
        art = np.arange(n_ns, n_ns + m)
        p_ub[art] = np.inf
        basic = art.copy()
        status[art] = _BASIC
        x[art] = np.abs(res)
        cost = np.zeros(self.N)
        cost[art] = 1.0
        its = 0
        if m:
            state, binv, basic, status, x, its = self._iterate(cost, basic, status, x, p_lb, p_ub, self.max_iter)
            if state != OPTIMAL:
                return LPSolution(NUMERICAL_FAILURE, iterations=its, message=f"phase I stopped: {state}")
            infeas = float(np.sum(x[art]))
            if infeas > self.feas_tol * (1.0 + np.abs(self.b).max(initial=0.0)) * max(1, m) ** 0.5:
                return LPSolution(INFEASIBLE, iterations=its, message=f"phase I residual {infeas:.3g}")
        # artificials are now pinned to zero; any still basic leave when they block a ratio test
        for k in art:
            if status[k] != _BASIC:
                status[k] = _AT_LOWER
                x[k] = 0.0
        return basic, status, x, its

    def _finish(self, binv, basic, status, x, cost, sgn, c, its):
        try:
            binv = _BasisInverse(self.A, basic)
        except RuntimeError:
            return LPSolution(NUMERICAL_FAILURE, iterations=its, message="final basis is singular")
        x = self._nonbasic_x(status) * (status != _BASIC)
        x = self._recompute_basic(binv, basic, status, x)
        y = binv.btran(cost[basic])
        xs = x[: self.n] * self.col_scale
        # snap to bounds that the scaled solve hit within tolerance
        xs = np.clip(xs, self.p.lb, self.p.ub)
        viol = self.p.violation(xs)
        obj = float(c @ xs)
        duals = sgn * y * self.row_scale
        sol = LPSolution(OPTIMAL, xs, obj, viol, duals, its, basis=Basis(basic.copy(), status.copy()))
        limit = 1e-8 * (1.0 + np.abs(self.p.b).max(initial=0.0))
        if viol > limit:
            sol.status = NUMERICAL_FAILURE
            sol.message = f"constraint violation {viol:.3g} exceeds {limit:.3g}"
        return sol


def solve_lp(p: LinearProgram, warm: Optional[Basis] = None, **options) -> LPSolution:
    """Solve one linear program; see ``SimplexSolver`` for reuse across objectives."""
    return SimplexSolver(p, **options).solve(warm=warm)
