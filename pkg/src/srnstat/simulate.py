"""Exact stochastic simulation (Gillespie's direct method) and time-average distributions.

Propensities can be arbitrary expressions, so they are tabulated on a box
``[0, hi_1) x ... x [0, hi_n)`` of states and the compiled stepping kernel
looks them up.  When a path leaves the box, the box is doubled along the
offending axes and stepping resumes.  Randomness comes from numpy's PCG64
generator: every jump consumes exactly two doubles from a single stream (one
for the sojourn, one for the reaction), drawn in chunks.  Because chunked
draws reproduce the unchunked stream, runs depend only on the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .distribution import TruncatedDistribution
from .model import ReactionNetwork
from .statespace import Truncation

DEFAULT_JUMP_CAP = 100_000_000
GENERATOR = "numpy.random.PCG64"
_CHUNK = 1 << 20
_MAX_BOX = 20_000_000
_MIN_SIDE = 64

_DONE, _OUT_OF_BOX, _NEED_RANDOM, _CAP = 0, 1, 2, 3


class SimulationError(RuntimeError):
    pass


@dataclass
class SimulationRun:
    """A finished path summarised by the time spent in each visited state."""

    seed: int
    t_final: float
    x0: tuple
    jump_cap: int
    burn_in: float  # fraction of [0, t_final] left out of the dwell times
    states: np.ndarray  # visited states after burn-in, (K, n), lexicographic
    dwell: np.ndarray  # time spent in each, sums to (1 - burn_in) * t_final
    n_jumps: int
    x_final: tuple
    meta: dict = field(default_factory=dict)

    @property
    def window(self) -> float:
        return float(self.dwell.sum())


@njit(cache=True)
def _ssa_kernel(x, t, t_end, props, hi, nu, U, upos, dwell, n_jumps, cap):
    """Step until ``t_end``, the edge of the box, the end of the uniforms, or the jump cap."""
    n = x.size
    m = nu.shape[0]
    while True:
        if n_jumps >= cap:
            return _CAP, t, upos, n_jumps
        idx = 0
        for i in range(n):
            if x[i] >= hi[i]:
                return _OUT_OF_BOX, t, upos, n_jumps
            idx = idx * hi[i] + x[i]
        q = 0.0
        for j in range(m):
            q += props[idx, j]
        if q <= 0.0:
            dwell[idx] += t_end - t
            return _DONE, t_end, upos, n_jumps
        if upos + 2 > U.size:
            return _NEED_RANDOM, t, upos, n_jumps
        tau = -np.log(1.0 - U[upos]) / q
        if t + tau >= t_end:
            # the sojourn outlasts the window; its draw is spent either way
            dwell[idx] += t_end - t
            return _DONE, t_end, upos + 2, n_jumps
        dwell[idx] += tau
        t += tau
        target = U[upos + 1] * q
        acc = 0.0
        k = m - 1
        for j in range(m):
            acc += props[idx, j]
            if target < acc and props[idx, j] > 0.0:
                k = j
                break
        while props[idx, k] <= 0.0:  # round-off landed past the last live reaction
            k -= 1
        for i in range(n):
            x[i] += nu[k, i]
        upos += 2
        n_jumps += 1


class _Box:
    def __init__(self, net: ReactionNetwork, hi: np.ndarray):
        self.net = net
        self.hi = hi.astype(np.int64)
        self.dwell = np.zeros(int(np.prod(self.hi)))
        self._tabulate()

    def _tabulate(self):
        size = int(np.prod(self.hi))
        if size > _MAX_BOX:
            raise SimulationError(f"the path wandered over more than {_MAX_BOX} lattice cells")
        grids = np.indices(tuple(self.hi)).reshape(len(self.hi), -1).T
        self.props = np.ascontiguousarray(self.net.propensities(grids))
        live = np.any(self.net.nu != 0, axis=1)
        self.props[:, ~live] = 0.0

    def grow(self, x: np.ndarray):
        old_hi, old = self.hi.copy(), self.dwell
        new_hi = np.where(x >= old_hi, np.maximum(2 * old_hi, x + 1), old_hi)
        self.hi = new_hi.astype(np.int64)
        self.dwell = np.zeros(int(np.prod(self.hi)))
        cells = np.indices(tuple(old_hi)).reshape(len(old_hi), -1).T
        self.dwell[np.ravel_multi_index(cells.T, tuple(self.hi))] = old
        self._tabulate()

    def visited(self):
        nz = np.flatnonzero(self.dwell)
        states = np.stack(np.unravel_index(nz, tuple(self.hi)), axis=1).astype(np.int64)
        return states, self.dwell[nz]


def gillespie(net: ReactionNetwork, x0: Sequence[int], t_final: float, seed: int,
              jump_cap: int = DEFAULT_JUMP_CAP, burn_in: float = 0.0) -> SimulationRun:
    """Simulate one path on ``[0, t_final]`` from ``x0``.

    ``burn_in`` is the fraction of the horizon discarded before dwell times
    are recorded.  Reaching ``jump_cap`` raises: the chain may be exploding,
    or the cap is simply too small for the horizon.
    """
    if not t_final > 0:
        raise ValueError("t_final must be positive")
    if not 0.0 <= burn_in < 1.0:
        raise ValueError("burn_in must lie in [0, 1)")
    x = np.array(x0, dtype=np.int64).ravel()
    if x.size != net.n_species or np.any(x < 0):
        raise ValueError(f"invalid initial state {tuple(x0)}")
    rng = np.random.Generator(np.random.PCG64(seed))
    box = _Box(net, np.maximum(x + 1, _MIN_SIDE))
    nu = np.ascontiguousarray(net.nu, dtype=np.int64)
    U = rng.random(_CHUNK)
    upos = 0
    t = 0.0
    n_jumps = 0
    t_burn = burn_in * t_final
    for t_end in ((t_burn, t_final) if t_burn > 0 else (t_final,)):
        while True:
            status, t, upos, n_jumps = _ssa_kernel(x, t, t_end, box.props, box.hi, nu, U, upos, box.dwell,
                                                   n_jumps, jump_cap)
            if status == _DONE:
                break
            if status == _OUT_OF_BOX:
                box.grow(x)
            elif status == _NEED_RANDOM:
                U = np.concatenate([U[upos:], rng.random(_CHUNK)])
                upos = 0
            else:
                raise SimulationError(f"jump cap {jump_cap} reached at t = {t:.6g} < {t_final:g}; "
                                      "either the cap is too small or the chain explodes")
        if t_end == t_burn and t_burn < t_final:
            box.dwell[:] = 0.0
    states, dwell = box.visited()
    return SimulationRun(seed, float(t_final), tuple(int(v) for v in np.array(x0).ravel()), int(jump_cap),
                         float(burn_in), states, dwell, int(n_jumps), tuple(int(v) for v in x),
                         {"generator": GENERATOR})


def empirical_distribution(run: SimulationRun) -> TruncatedDistribution:
    """Fraction of the recorded window spent in each visited state."""
    T = Truncation(run.states.copy(), kind="visited")
    vals = run.dwell[np.lexsort(run.states.T[::-1])]
    return TruncatedDistribution(T, vals / vals.sum(), {"scheme": "ssa", "seed": run.seed, "t_final": run.t_final})


def simulate_many(net: ReactionNetwork, x0, t_final: float, seeds: Sequence[int], threads: int = 1,
                  **options) -> list:
    """Independent runs, one per seed, returned in seed order."""
    if threads <= 1:
        return [gillespie(net, x0, t_final, s, **options) for s in seeds]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda s: gillespie(net, x0, t_final, s, **options), seeds))
