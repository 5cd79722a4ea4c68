"""Distributions living on a truncation, and statewise bound pairs."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .statespace import Truncation

NEG_CLIP = 1e-14


class NegativeMassError(ArithmeticError):
    pass


@dataclass
class TruncatedDistribution:
    """Values on the states of a truncation; zero everywhere else."""

    truncation: Truncation
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        if v.shape != (len(self.truncation),):
            raise ValueError("values must align with the truncation's states")
        scale = max(1.0, float(np.abs(v).max(initial=0.0)))
        if np.any(v < -NEG_CLIP * scale):
            raise NegativeMassError(f"distribution has a negative entry {v.min():.3g}")
        v[v < 0] = 0.0
        self.values = v

    @property
    def mass(self) -> float:
        return float(self.values.sum())

    @property
    def states(self) -> np.ndarray:
        return self.truncation.states

    def at(self, X) -> np.ndarray:
        """Values at arbitrary states (zero outside the truncation)."""
        idx = self.truncation.lookup(X)
        out = np.zeros(idx.size)
        inside = idx >= 0
        out[inside] = self.values[idx[inside]]
        return out

    def normalized(self) -> "TruncatedDistribution":
        return TruncatedDistribution(self.truncation, self.values / self.values.sum(), dict(self.meta))

    def as_dict(self) -> dict:
        return {tuple(s): float(v) for s, v in zip(self.truncation.states.tolist(), self.values)}

    def to_csv(self, species, fh=None, column: str = "probability") -> str:
        buf = fh if fh is not None else io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(species) + [column])
        for s, v in zip(self.truncation.states.tolist(), self.values):
            w.writerow(s + [repr(float(v))])
        return buf.getvalue() if fh is None else ""


@dataclass
class BoundsPair:
    """Statewise lower and upper bounds on a stationary distribution.

    ``validity`` is ``"statewise"`` when ``lower <= pi <= upper`` holds on the
    truncation for the chain's stationary distribution, or ``"conditional"``
    when only the truncation-conditional statement is known.
    """

    lower: Optional[TruncatedDistribution]
    upper: TruncatedDistribution
    tail_bound: float
    validity: str = "statewise"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lower is not None:
            if np.any(self.lower.values > self.upper.values + 1e-12):
                raise ValueError("lower bound exceeds upper bound")

    @property
    def truncation(self) -> Truncation:
        return self.upper.truncation

    @property
    def midpoint(self) -> TruncatedDistribution:
        lo = self.lower.values if self.lower is not None else self.upper.values
        return TruncatedDistribution(self.truncation, 0.5 * (lo + self.upper.values))

    def to_csv(self, species, fh=None) -> str:
        buf = fh if fh is not None else io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(species) + ["lower", "upper"])
        lo = self.lower.values if self.lower is not None else np.full(len(self.truncation), np.nan)
        for s, a, b in zip(self.truncation.states.tolist(), lo, self.upper.values):
            w.writerow(s + [repr(float(a)), repr(float(b))])
        return buf.getvalue() if fh is None else ""


def interval_truncation(r: int) -> Truncation:
    """``{0, 1, ..., r-1}`` for one-species chains."""
    return Truncation(np.arange(r, dtype=np.int64)[:, None], r=r, kind="sublevel")
