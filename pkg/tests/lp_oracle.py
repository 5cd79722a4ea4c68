"""Brute-force vertex enumeration for tiny linear programs, used as an oracle."""

import itertools

import numpy as np

from srnstat.lpsolve import EQ, GE, LE, LinearProgram


def random_program(rng, n_vars=3, n_rows=4, box=10.0) -> LinearProgram:
    """A small random program with finite bounds, so it is never unbounded."""
    A = rng.integers(-5, 6, size=(n_rows, n_vars)).astype(float)
    x0 = rng.uniform(0, box / 2, n_vars)  # keeps a good share of the programs feasible
    rel = tuple(rng.choice([LE, GE, EQ], size=n_rows, p=[0.5, 0.3, 0.2]))
    b = A @ x0 + np.where(np.array(rel) == LE, 1.0, np.where(np.array(rel) == GE, -1.0, 0.0))
    if rng.random() < 0.2:
        b = b + rng.integers(-20, 21, n_rows)
    c = rng.integers(-5, 6, n_vars).astype(float)
    return LinearProgram(c, A, rel, np.round(b, 6), np.zeros(n_vars), np.full(n_vars, box),
                         sense=str(rng.choice(["min", "max"])))


def brute_force(p: LinearProgram, tol: float = 1e-9):
    """Best objective over all basic feasible points, or None when infeasible.

    Every n-subset of constraint and bound hyperplanes is intersected; the
    feasibility check enforces equalities and the remaining inequalities.
    """
    A = p.A.toarray()
    n = p.n_vars
    I = np.eye(n)
    normals = np.vstack([A, I, I])
    rhs = np.concatenate([p.b, p.lb, p.ub])
    combos = np.array(list(itertools.combinations(range(normals.shape[0]), n)))
    M = normals[combos]
    ok = np.abs(np.linalg.det(M)) > 1e-12
    M, combos = M[ok], combos[ok]
    X = np.linalg.solve(M, rhs[combos][..., None])[..., 0]
    Ax = X @ A.T
    d = Ax - p.b
    rel = np.array(p.relations)
    scale = tol * (1 + np.abs(X).max(axis=1, initial=0.0))
    viol = np.zeros(len(X))
    if d.size:
        viol = np.max(np.where(rel == LE, d, np.where(rel == GE, -d, np.abs(d))), axis=1, initial=0.0)
    viol = np.maximum(viol, np.max(np.maximum(p.lb - X, X - p.ub), axis=1))
    feas = viol <= scale
    if not feas.any():
        return None
    vals = X[feas] @ p.c
    return float(vals.min() if p.sense == "min" else vals.max())


def dual_bound(p: LinearProgram, y: np.ndarray) -> float:
    """Lagrangian bound from row duals ``y``; equals the optimum under strong duality."""
    d = p.c - p.A.T @ y
    at_lb = d > 0 if p.sense == "min" else d < 0
    return float(p.b @ y + np.sum(np.where(at_lb, d * p.lb, d * p.ub)))


def dual_signs_ok(p: LinearProgram, y: np.ndarray, tol: float = 1e-9) -> bool:
    rel = np.array(p.relations)
    s = 1.0 if p.sense == "min" else -1.0
    return bool(np.all(s * y[rel == LE] <= tol) and np.all(s * y[rel == GE] >= -tol))

