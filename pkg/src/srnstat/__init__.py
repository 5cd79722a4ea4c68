"""Stationary distributions of stochastic reaction networks on finite truncations.

Schemes: birth-death product formulas, truncate-and-augment (TA), level-dependent
quasi-birth-death recursions (LDQBDP), linear programming over an outer
approximation (LP), and the bound-producing iterated variants (ITA, ILP).
"""

from .distribution import BoundsPair, TruncatedDistribution, interval_truncation
from .errors import ErrorReport, distances, drift_apply, liu_bound, tail_bound, tighten_bound_lp
from .model import ReactionNetwork, load_model, parse_model
from .scheme_bdp import BirthDeathSpec, bdp_bounds, bdp_conditional, bdp_stationary
from .scheme_ita import ita_bounds, ita_sweep
from .scheme_lp import build_polytope, ilp_statewise_bounds, lp_approximate
from .scheme_ta import build_augmented, ta_solve
from .simulate import empirical_distribution, gillespie
from .statespace import Truncation, build_sublevel_truncation, build_superlevel_truncation

__version__ = "0.1.0"

__all__ = [
    "BirthDeathSpec", "BoundsPair", "ErrorReport", "ReactionNetwork", "TruncatedDistribution", "Truncation",
    "bdp_bounds", "bdp_conditional", "bdp_stationary", "build_augmented", "build_polytope",
    "build_sublevel_truncation", "build_superlevel_truncation", "distances", "drift_apply", "empirical_distribution",
    "gillespie", "ilp_statewise_bounds", "interval_truncation", "ita_bounds", "ita_sweep", "liu_bound", "load_model",
    "lp_approximate", "parse_model", "ta_solve", "tail_bound", "tighten_bound_lp",
]
