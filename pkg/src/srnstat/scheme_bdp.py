"""Birth-death processes: product-form conditional distributions and their bounds."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .distribution import BoundsPair, TruncatedDistribution, interval_truncation
from .expr import parse_expr
from .model import ModelError, ReactionNetwork


class BirthDeathError(ValueError):
    pass


@dataclass(frozen=True)
class BirthDeathSpec:
    """Birth rate ``a_plus(x)`` and death rate ``a_minus(x)`` as vectorised functions of the count."""

    birth: Callable[[np.ndarray], np.ndarray]
    death: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def from_exprs(cls, birth: str, death: str, var: str = "x") -> "BirthDeathSpec":
        b, d = parse_expr(birth), parse_expr(death)

        def wrap(e):
            def fn(x):
                x = np.asarray(x, dtype=float)
                return np.broadcast_to(np.asarray(e.eval({var: x}), dtype=float), x.shape).copy()
            return fn

        return cls(wrap(b), wrap(d))

    @classmethod
    def from_network(cls, net: ReactionNetwork) -> "BirthDeathSpec":
        """Aggregate the +1 and -1 reactions of a one-species network."""
        if net.n_species != 1:
            raise BirthDeathError("a birth-death process has exactly one species")
        steps = net.nu[:, 0]
        if np.any(np.abs(steps) > 1):
            raise BirthDeathError("reactions must change the count by at most one")
        up = steps == 1
        down = steps == -1

        def rate(mask):
            def fn(x):
                x = np.asarray(x, dtype=np.int64)
                A = net.propensities(x.reshape(-1, 1))
                return A[:, mask].sum(axis=1)
            return fn

        return cls(rate(up), rate(down))


def bdp_log_gamma(spec: BirthDeathSpec, r: int) -> np.ndarray:
    """``log gamma(0..r-1)``, ``gamma(x) = prod_{k<=x} a_plus(k-1) / a_minus(k)``; ``-inf`` once a birth rate vanishes."""
    if r < 1:
        raise BirthDeathError("r must be at least 1")
    x = np.arange(1, r)
    births = spec.birth(x - 1)
    deaths = spec.death(x)
    if np.any(deaths <= 0):
        bad = int(x[np.argmax(deaths <= 0)])
        raise BirthDeathError(f"death rate vanishes at x={bad}")
    if np.any(births < 0):
        raise BirthDeathError("birth rate is negative")
    with np.errstate(divide="ignore"):
        steps = np.log(births) - np.log(deaths)
    return np.concatenate([[0.0], np.cumsum(steps)])


def bdp_gamma(spec: BirthDeathSpec, r: int) -> np.ndarray:
    return np.exp(bdp_log_gamma(spec, r))


def bdp_conditional(spec: BirthDeathSpec, r: int) -> TruncatedDistribution:
    """``gamma / gamma(S_r)`` on ``{0, ..., r-1}``."""
    lg = bdp_log_gamma(spec, r)
    return TruncatedDistribution(interval_truncation(r), np.exp(lg - logsumexp(lg)), {"scheme": "bdp"})


def bdp_bounds(spec: BirthDeathSpec, r: int, c: float) -> BoundsPair:
    """Upper bound = conditional distribution; lower bound = ``(1 - c/r)`` times it, when ``r > c``."""
    upper = bdp_conditional(spec, r)
    eps = c / r
    lower = None
    if r > c:
        lower = TruncatedDistribution(upper.truncation, (1.0 - eps) * upper.values)
    return BoundsPair(lower, upper, eps, meta={"scheme": "bdp", "guaranteed_tv_lower": eps if lower is not None else None})


def bdp_stationary(spec: BirthDeathSpec, tol: float = 1e-18, run: int = 50, cap: int = 5_000_000,
                   start: int = 256) -> TruncatedDistribution:
    """The full stationary distribution, summed until the tail stays below ``tol`` for ``run`` states."""
    n = start
    while True:
        if n > cap:
            raise BirthDeathError("product-form series did not settle within the state cap")
        lg = bdp_log_gamma(spec, n)
        p = np.exp(lg - logsumexp(lg))
        small = p < tol
        # need the last `run` entries tiny and the ratios decaying
        if n > run and small[-run:].all():
            # trim the tail to where the run of tiny values begins
            last_big = np.flatnonzero(~small)
            end = int(last_big[-1]) + 1 + run if last_big.size else run
            end = min(end, n)
            lg = lg[:end]
            p = np.exp(lg - logsumexp(lg))
            return TruncatedDistribution(interval_truncation(end), p, {"scheme": "bdp-series", "tol": tol})
        n *= 2
