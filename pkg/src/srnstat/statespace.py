"""Truncations of the state space and their structural sets.

A Truncation is a finite, lexicographically ordered set of states with an
exact state<->index map.  Everything downstream addresses states by index.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .expr import Expr, parse_expr
from .model import ModelError, ReactionNetwork

DEFAULT_STATE_CAP = 5_000_000

NormLikeFn = Union[Expr, str, Callable[[np.ndarray], np.ndarray]]


class StateCapExceeded(RuntimeError):
    pass


class LevelError(ValueError):
    pass


def as_function(net: ReactionNetwork, fn: NormLikeFn) -> Callable[[np.ndarray], np.ndarray]:
    """Turn an expression, expression text, or vectorised callable into ``X -> values``."""
    if isinstance(fn, str):
        fn = parse_expr(fn)
    if callable(fn) and not hasattr(fn, "eval"):
        return lambda X: np.asarray(fn(np.atleast_2d(np.asarray(X, dtype=np.int64))), dtype=float)
    return lambda X: net.eval_expr(fn, X)


def apply_generator(net: ReactionNetwork, fn, X: np.ndarray) -> np.ndarray:
    """``Qg(x) = sum_j a_j(x) (g(x + nu_j) - g(x))`` at each row of ``X``."""
    g = as_function(net, fn)
    X = np.atleast_2d(np.asarray(X, dtype=np.int64))
    A = net.propensities(X)
    gx = g(X)
    out = np.zeros(X.shape[0])
    for j in range(net.n_reactions):
        live = A[:, j] > 0
        if not live.any():
            continue
        Y = X[live] + net.nu[j]
        out[live] += A[live, j] * (g(Y) - gx[live])
    return out


@dataclass(eq=False)
class Truncation:
    states: np.ndarray  # (N, n) int64, lexicographically sorted
    r: float = float("nan")
    kind: str = "explicit"
    tail_bound: Optional[float] = None
    _lookup: object = field(default=None, repr=False)

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.states, dtype=np.int64))
        if S.shape[0] == 0:
            raise ValueError("a truncation must contain at least one state")
        if (S < 0).any():
            raise ValueError("states must have nonnegative counts")
        order = np.lexsort(S.T[::-1])
        S = S[order]
        if S.shape[0] > 1 and (np.diff(S, axis=0) == 0).all(axis=1).any():
            raise ValueError("duplicate states in truncation")
        self.states = S
        self._build_lookup()

    @classmethod
    def from_states(cls, states: Sequence[Sequence[int]], kind: str = "explicit", r: float = float("nan")):
        return cls(np.array(states, dtype=np.int64).reshape(len(states), -1), r=r, kind=kind)

    def _build_lookup(self):
        S = self.states
        hi = S.max(axis=0) + 1
        box = float(np.prod(hi.astype(float)))
        if box <= 5e7:
            table = np.full(int(box), -1, dtype=np.int64)
            table[np.ravel_multi_index(S.T, hi)] = np.arange(S.shape[0])
            self._lookup = ("dense", hi, table)
        else:
            self._lookup = ("dict", None, {tuple(s): i for i, s in enumerate(S.tolist())})

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def n_species(self) -> int:
        return self.states.shape[1]

    def state(self, i: int) -> tuple:
        return tuple(int(v) for v in self.states[i])

    def lookup(self, Y: np.ndarray) -> np.ndarray:
        """Indices of the rows of ``Y`` in the truncation, -1 where absent."""
        Y = np.atleast_2d(np.asarray(Y, dtype=np.int64))
        kind, hi, table = self._lookup
        if kind == "dense":
            inside = (Y >= 0).all(axis=1) & (Y < hi).all(axis=1)
            out = np.full(Y.shape[0], -1, dtype=np.int64)
            if inside.any():
                out[inside] = table[np.ravel_multi_index(Y[inside].T, hi)]
            return out
        return np.array([table.get(tuple(y), -1) for y in Y.tolist()], dtype=np.int64)

    def index_of(self, x) -> int:
        i = int(self.lookup(np.array([x]))[0])
        if i < 0:
            raise KeyError(f"state {tuple(x)} is not in the truncation")
        return i

    def __contains__(self, x) -> bool:
        return int(self.lookup(np.array([x]))[0]) >= 0

    def to_csv(self, species: Sequence[str], fh=None) -> str:
        buf = fh if fh is not None else io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(species) + ["index"])
        for i, s in enumerate(self.states.tolist()):
            w.writerow(s + [i])
        return buf.getvalue() if fh is None else ""


def _lattice_expand(net, keep: Callable[[np.ndarray], np.ndarray], seeds: np.ndarray, cap: int) -> np.ndarray:
    n = net.n_species
    steps = np.vstack([np.eye(n, dtype=np.int64), -np.eye(n, dtype=np.int64)])
    seen = {tuple(s) for s in seeds.tolist()}
    found = [seeds]
    frontier = seeds
    total = seeds.shape[0]
    while frontier.shape[0]:
        cand = (frontier[:, None, :] + steps[None, :, :]).reshape(-1, n)
        cand = cand[(cand >= 0).all(axis=1)]
        if cand.shape[0] == 0:
            break
        cand = np.unique(cand, axis=0)
        fresh = np.array([tuple(c) not in seen for c in cand.tolist()], dtype=bool)
        cand = cand[fresh]
        if cand.shape[0] == 0:
            break
        cand = cand[keep(cand)]
        seen.update(tuple(c) for c in cand.tolist())
        total += cand.shape[0]
        if total > cap:
            raise StateCapExceeded(f"enumeration exceeded {cap} states; is the function norm-like and r sensible?")
        found.append(cand)
        frontier = cand
    return np.vstack(found)


def build_sublevel_truncation(net: ReactionNetwork, w: NormLikeFn, r: float, seed_states=None,
                              cap: int = DEFAULT_STATE_CAP) -> Truncation:
    """``{x : w(x) < r}``, grown from the seeds over unit lattice steps."""
    wf = as_function(net, w)
    if seed_states is None:
        seeds = np.zeros((1, net.n_species), dtype=np.int64)
    else:
        seeds = np.atleast_2d(np.asarray(seed_states, dtype=np.int64))
    ok = wf(seeds) < r
    if not ok.all():
        raise ValueError("seed states must lie in the sublevel set")
    states = _lattice_expand(net, lambda X: wf(X) < r, seeds, cap)
    return Truncation(states, r=r, kind="sublevel")


def build_superlevel_truncation(net: ReactionNetwork, u: NormLikeFn, r: float, qu_max: float, seed_states=None,
                                cap: int = DEFAULT_STATE_CAP) -> Truncation:
    """``{x : Qu(x) > -r * qu_max}`` with the attached tail bound ``1/(r+1)``.

    ``qu_max`` is the supremum of ``Qu`` over the whole state space; it cannot
    be computed from a finite set and must be supplied.
    """
    if not qu_max > 0:
        raise ValueError("qu_max must be positive")
    keep = lambda X: apply_generator(net, u, X) > -r * qu_max
    if seed_states is None:
        seeds = np.zeros((1, net.n_species), dtype=np.int64)
    else:
        seeds = np.atleast_2d(np.asarray(seed_states, dtype=np.int64))
    if not keep(seeds).all():
        raise ValueError("seed states must lie in the superlevel set")
    states = _lattice_expand(net, keep, seeds, cap)
    return Truncation(states, r=r, kind="superlevel", tail_bound=1.0 / (r + 1.0))


# --------------------------------------------------------------------------- jumps restricted to T


@dataclass
class Jumps:
    """Per-state, per-reaction jump data for a truncation."""

    A: np.ndarray  # propensities (N, m); zero for reactions with nu == 0
    target: np.ndarray  # target index in T, -1 outside, (N, m)
    exit_rate: np.ndarray  # q(x), full exit rate
    out_rate: np.ndarray  # q_o(x)


def jumps(net: ReactionNetwork, T: Truncation) -> Jumps:
    X = T.states
    A = net.propensities(X)
    N, m = A.shape
    target = np.full((N, m), -1, dtype=np.int64)
    for j in range(m):
        if not net.nu[j].any():
            A[:, j] = 0.0
            continue
        target[:, j] = T.lookup(X + net.nu[j])
    exit_rate = A.sum(axis=1) if m else np.zeros(N)
    out_rate = np.where(target < 0, A, 0.0).sum(axis=1) if m else np.zeros(N)
    return Jumps(A, target, exit_rate, out_rate)


def out_boundary(net: ReactionNetwork, T: Truncation):
    """``(indices with q_o > 0, q_o)`` where ``q_o(x)`` is the rate of leaving T from x."""
    J = jumps(net, T)
    return np.flatnonzero(J.out_rate > 0), J.out_rate


def in_boundary(net: ReactionNetwork, T: Truncation) -> np.ndarray:
    """Indices of states of T reachable in one jump from outside T."""
    X = T.states
    hit = np.zeros(len(T), dtype=bool)
    for j in range(net.n_reactions):
        nu = net.nu[j]
        if not nu.any():
            continue
        P = X - nu
        cand = (P >= 0).all(axis=1) & (T.lookup(P) < 0)
        if not cand.any():
            continue
        idx = np.flatnonzero(cand)
        a = net.propensities(P[idx])[:, j]
        hit[idx[a > 0]] = True
    return np.flatnonzero(hit)


def interior_set(net: ReactionNetwork, T: Truncation) -> np.ndarray:
    """Indices of states of T that cannot be entered in one jump from outside."""
    mask = np.ones(len(T), dtype=bool)
    mask[in_boundary(net, T)] = False
    return np.flatnonzero(mask)


# --------------------------------------------------------------------------- levels


@dataclass
class LevelStructure:
    levels: list  # list of index arrays, levels[l] = states with f == l
    level_of: np.ndarray
    level_fn: object = None


def detect_levels(net: ReactionNetwork, T: Truncation, f: NormLikeFn) -> LevelStructure:
    """Group states by the integer level function ``f`` after checking jumps move one level at most."""
    fn = as_function(net, f)
    X = T.states
    fx = fn(X)
    if not np.all(fx == np.round(fx)) or (fx < 0).any():
        raise LevelError("level function must be a nonnegative integer on the truncation")
    fx = fx.astype(np.int64)
    A = net.propensities(X)
    for j in range(net.n_reactions):
        live = np.flatnonzero(A[:, j] > 0)
        if live.size == 0:
            continue
        step = fn(X[live] + net.nu[j]) - fx[live]
        badpos = np.flatnonzero(np.abs(step) > 1)
        if badpos.size:
            k = live[badpos[0]]
            raise LevelError(
                f"reaction {j} changes the level by {int(step[badpos[0]])} at state {T.state(k)}"
            )
    nlev = int(fx.max()) + 1
    levels = [np.flatnonzero(fx == l) for l in range(nlev)]
    return LevelStructure(levels, fx, f)


def level_cutoff(r: float, power: int = 6) -> int:
    """Number of levels ``floor(r^(1/power))`` matching the sublevel sets of ``(x1+...+xn)^power``."""
    L = int(round(r ** (1.0 / power)))
    while L ** power > r:
        L -= 1
    while (L + 1) ** power <= r:
        L += 1
    return L


# --------------------------------------------------------------------------- classes


@dataclass
class ClassDecomposition:
    closed_classes: list  # index arrays
    transient: np.ndarray
    truncation_relative: bool = True
    note: str = "closedness is relative to the truncation: edges leaving it are ignored"


def transition_graph(net: ReactionNetwork, T: Truncation) -> csr_matrix:
    J = jumps(net, T)
    rows, cols = np.nonzero((J.target >= 0) & (J.A > 0))
    tg = J.target[rows, cols]
    keep = tg != rows
    n = len(T)
    return csr_matrix((np.ones(keep.sum()), (rows[keep], tg[keep])), shape=(n, n))


def communicating_classes(net: ReactionNetwork, T: Truncation) -> ClassDecomposition:
    G = transition_graph(net, T)
    ncomp, label = connected_components(G, directed=True, connection="strong")
    G = G.tocoo()
    leaves = np.zeros(ncomp, dtype=bool)
    cross = label[G.row] != label[G.col]
    leaves[label[G.row[cross]]] = True
    closed = [np.flatnonzero(label == c) for c in range(ncomp) if not leaves[c]]
    closed.sort(key=lambda a: int(a[0]))
    transient = np.flatnonzero(leaves[label])
    return ClassDecomposition(closed, transient)
