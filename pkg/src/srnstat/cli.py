"""Command line: ``srnstat {solve,bounds,compare,simulate,classes,drift-check}``.

Exit status is 0 on success, 1 on usage or input errors, and 2 when a
numerical method fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .bench import compare_schemes, default_case, write_compare_csv
from .distribution import BoundsPair, TruncatedDistribution, interval_truncation
from .errors import (
    HEURISTIC,
    RIGOROUS,
    DriftError,
    ErrorReport,
    approximation_report,
    bounds_report,
    drift_apply,
    liu_bound,
    tighten_bound_lp,
    truncation_id,
)
from .expr import ModelSyntaxError, parse_expr
from .model import ModelError, ReactionNetwork, load_model
from .scheme_bdp import BirthDeathSpec, bdp_bounds, bdp_conditional, bdp_stationary
from .scheme_ita import ita_bounds, ita_marginal_bounds, ita_sweep
from .scheme_ldqbdp import extract_blocks, ldqbdp_solve, r_matrix_recursion
from .scheme_lp import build_polytope, ilp_bounds, ilp_marginal_bounds, ilp_statewise_bounds, lp_approximate
from .scheme_ta import build_augmented, parse_reentry, ta_diagnostics, ta_solve
from .simulate import DEFAULT_JUMP_CAP, empirical_distribution, gillespie
from .statespace import Truncation, build_sublevel_truncation, communicating_classes, detect_levels

SCHEMES = ("bdp", "ta", "ldqbdp", "lp", "ita", "ilp")
BOUND_SCHEMES = ("bdp", "ita", "ilp")
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    model: Optional[str]
    scheme: Optional[str]
    trunc_w: Optional[str]
    trunc_r: Optional[float]
    levels: Optional[str]
    trunc_file: Optional[str]
    moment_w: Optional[str]
    moment_c: Optional[float]
    reentry: str
    objective: str
    out: Optional[str]
    seed: int
    threads: int
    tol: float

    @classmethod
    def from_args(cls, a) -> "RunConfig":
        cfg = cls(getattr(a, "model", None), getattr(a, "scheme", None), getattr(a, "trunc_w", None),
                  getattr(a, "trunc_r", None), getattr(a, "levels", None), getattr(a, "trunc_file", None),
                  getattr(a, "moment_w", None), getattr(a, "moment_c", None), getattr(a, "reentry", "boundary-mid"),
                  getattr(a, "objective", "mass"), getattr(a, "out", None), getattr(a, "seed", 0),
                  getattr(a, "threads", 1), getattr(a, "tol", 1e-18))
        cfg.validate()
        return cfg

    def validate(self):
        if self.scheme in ("lp", "ilp", "ita") and self.moment_c is None:
            raise UsageError(f"--scheme {self.scheme} needs a moment bound: --moment-c (and --moment-w)")
        if self.scheme in ("lp", "ilp") and self.moment_w is None and self.trunc_w is None:
            raise UsageError(f"--scheme {self.scheme} needs --moment-w")
        if self.scheme == "ldqbdp" and self.levels is None:
            raise UsageError("--scheme ldqbdp needs --levels")
        if self.threads < 1:
            raise UsageError("--threads must be at least 1")

    @property
    def w(self) -> str:
        return self.moment_w if self.moment_w is not None else self.trunc_w


def _add_common(p, scheme_choices=None):
    p.add_argument("--model", required=True, help="model file (.rxn)")
    if scheme_choices:
        p.add_argument("--scheme", required=True, choices=scheme_choices)
    p.add_argument("--trunc-w", help="truncation norm-like function w; the truncation is {w < r}")
    p.add_argument("--trunc-r", type=float, help="truncation level r")
    p.add_argument("--levels", help="level function for LDQBDP; alone, the truncation is {levels < r}")
    p.add_argument("--trunc-file", help="explicit truncation: CSV with one column per species")
    p.add_argument("--moment-w", help="w of a certified moment bound pi(w) <= c (defaults to --trunc-w)")
    p.add_argument("--moment-c", type=float, help="c of a certified moment bound pi(w) <= c")
    p.add_argument("--reentry", default="boundary-mid", help="state:i,j | uniform | boundary-mid | conditional:N")
    p.add_argument("--objective", default="mass", help="mass | state:<counts> | marginal:<k>")
    p.add_argument("--out", help="output prefix: writes <out>.csv and <out>.json")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--tol", type=float, default=1e-18, help="series tolerance for birth-death references")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="srnstat", description="Stationary distributions of stochastic reaction networks.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="approximate the stationary distribution on a truncation")
    _add_common(p, SCHEMES)

    p = sub.add_parser("bounds", help="statewise, marginal or mass bounds (bdp, ita, ilp)")
    _add_common(p, BOUND_SCHEMES)

    p = sub.add_parser("compare", help="benchmark grid of schemes against a reference")
    p.add_argument("--case", required=True, choices=("toggle", "schlogl-bimodal", "schlogl-unimodal"))
    p.add_argument("--schemes", help="comma separated subset of the case's schemes")
    p.add_argument("--trunc-r", help="comma separated r values (defaults to the case's grid)")
    p.add_argument("--out", help="CSV path (stdout when absent)")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("simulate", help="Gillespie simulation and its time-average distribution")
    p.add_argument("--model", required=True)
    p.add_argument("--x0", required=True, help="initial counts, comma separated")
    p.add_argument("--t-final", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--burn-in", type=float, default=0.0, help="fraction of [0, t_final] to discard")
    p.add_argument("--jump-cap", type=int, default=DEFAULT_JUMP_CAP)
    p.add_argument("--out", help="CSV path (stdout when absent)")

    p = sub.add_parser("classes", help="communicating classes of the chain restricted to a truncation")
    p.add_argument("--model", required=True)
    p.add_argument("--trunc-w")
    p.add_argument("--trunc-r", type=float)
    p.add_argument("--trunc-file")

    p = sub.add_parser("drift-check", help="check Qv <= d 1_F - f on a finite set; optionally bound TA errors")
    p.add_argument("--model", required=True)
    p.add_argument("--v", required=True, help="Lyapunov function v")
    p.add_argument("--f", default="1", help="f >= 1 (default 1)")
    p.add_argument("--F", required=True, dest="F", help="F as 'expr < value', e.g. 'S < 20'")
    p.add_argument("--trunc-w", required=True, help="check set is {trunc-w < trunc-r}")
    p.add_argument("--trunc-r", type=float, required=True)
    p.add_argument("--d", type=float, help="drift constant (default: smallest that works on the check set)")
    p.add_argument("--beta", type=float, help="with --reentry state:..., also compute the TA error bounds")
    p.add_argument("--reentry", help="fixed re-entry state for the TA error bounds, state:i,j")
    p.add_argument("--bound-r", type=float, help="TA truncation {trunc-w < bound-r} for the error bounds")
    p.add_argument("--out", help="JSON path (stdout when absent)")
    return ap


# --------------------------------------------------------------------------- helpers


def _truncation(net: ReactionNetwork, trunc_w, trunc_r, levels=None, trunc_file=None) -> Truncation:
    if trunc_file:
        with open(trunc_file, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        if rows and not rows[0][0].strip().lstrip("-").isdigit():
            rows = rows[1:]  # header
        S = np.array([[int(v) for v in r[:net.n_species]] for r in rows], dtype=np.int64)
        return Truncation(S.reshape(-1, net.n_species), kind="explicit")
    w = trunc_w if trunc_w is not None else levels
    if w is None or trunc_r is None:
        raise UsageError("give a truncation: --trunc-w and --trunc-r (or --levels and --trunc-r, or --trunc-file)")
    if net.n_species == 1 and w.strip() == net.species[0] and float(trunc_r).is_integer():
        return interval_truncation(int(trunc_r))
    return build_sublevel_truncation(net, w, trunc_r)


def _write(out: Optional[str], suffix: str, text: str):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out + suffix if suffix else out).write_text(text)


def _write_report(cfg: RunConfig, rep: ErrorReport):
    text = rep.to_json() + "\n"
    if cfg.out is None:
        sys.stderr.write(text)
    else:
        Path(cfg.out + ".json").write_text(text)


def _state(text: str) -> tuple:
    return tuple(int(v) for v in text.split(","))


def _tail(cfg: RunConfig, T: Truncation) -> Optional[float]:
    if cfg.moment_c is None:
        return T.tail_bound
    r = cfg.trunc_r
    return cfg.moment_c / r if r else None


# --------------------------------------------------------------------------- commands


def _solve_scheme(cfg: RunConfig, net: ReactionNetwork, T: Truncation):
    s = cfg.scheme
    if s == "bdp":
        spec = BirthDeathSpec.from_network(net)
        if cfg.moment_c is not None and cfg.trunc_r and cfg.trunc_r > cfg.moment_c:
            return bdp_bounds(spec, len(T), cfg.moment_c), {}
        return bdp_conditional(spec, len(T)), {}
    if s == "ta":
        sys_ = build_augmented(net, T, parse_reentry(cfg.reentry))
        pi = ta_solve(sys_)
        return pi, ta_diagnostics(sys_, pi)
    if s == "ldqbdp":
        blocks = extract_blocks(net, T, detect_levels(net, T, cfg.levels))
        pi = ldqbdp_solve(blocks, r_matrix_recursion(blocks))
        return pi, {"level0_residual": pi.meta["level0_residual"]}
    if s == "lp":
        return lp_approximate(build_polytope(net, T, cfg.w, cfg.moment_c, cfg.trunc_r)), {}
    if s == "ita":
        return ita_bounds(ita_sweep(net, T), cfg.moment_c, cfg.trunc_r), {}
    if s == "ilp":
        poly = build_polytope(net, T, cfg.w, cfg.moment_c, cfg.trunc_r)
        pair, rep = ilp_statewise_bounds(poly, cfg.threads)
        return pair, {"unique_certificate": float(rep.unique_certificate)}
    raise UsageError(f"unknown scheme {s}")


def cmd_solve(args) -> int:
    cfg = RunConfig.from_args(args)
    net = load_model(cfg.model)
    T = _truncation(net, cfg.trunc_w, cfg.trunc_r, cfg.levels, cfg.trunc_file)
    out, diag = _solve_scheme(cfg, net, T)
    tail = _tail(cfg, T)
    if isinstance(out, BoundsPair):
        _write(cfg.out, ".csv", out.to_csv(net.species))
        rep = bounds_report(out, cfg.scheme, tail if tail is not None else out.tail_bound)
    else:
        _write(cfg.out, ".csv", out.to_csv(net.species))
        rep = approximation_report(out, cfg.scheme, tail, diagnostics=diag)
        if "outflow" in diag:
            rep.get("outflow").note = "O_r: rate of leaving the truncation under the TA solution"
    _write_report(cfg, rep)
    return EXIT_OK


def cmd_bounds(args) -> int:
    cfg = RunConfig.from_args(args)
    if cfg.moment_c is None:
        raise UsageError("bounds need a moment bound: --moment-c (and --moment-w)")
    net = load_model(cfg.model)
    T = _truncation(net, cfg.trunc_w, cfg.trunc_r, cfg.levels, cfg.trunc_file)
    obj = cfg.objective
    if obj.startswith("marginal:"):
        k = int(obj.split(":", 1)[1])
        if not 0 <= k < net.n_species:
            raise UsageError(f"species index {k} out of range")
        if cfg.scheme == "ita":
            mb = ita_marginal_bounds(ita_sweep(net, T), k, cfg.moment_c, cfg.trunc_r)
        elif cfg.scheme == "ilp":
            mb, _ = ilp_marginal_bounds(build_polytope(net, T, cfg.w, cfg.moment_c, cfg.trunc_r), k, cfg.threads)
        else:
            raise UsageError("marginal bounds come from --scheme ita or ilp")
        lines = [f"{net.species[k]},lower,upper"] + [f"{i},{lo!r},{hi!r}" for i, lo, hi in
                                                      zip(mb.indices.tolist(), mb.lower.tolist(), mb.upper.tolist())]
        _write(cfg.out, ".csv", "\n".join(lines) + "\n")
        rep = ErrorReport(cfg.scheme + "-marginal", truncation_id(T))
        rep.add("tail_bound", mb.tail_bound, RIGOROUS)
        rep.add("lower_tv_error", mb.lower_error, RIGOROUS, "exact: 1 - sum of lower bounds")
        _write_report(cfg, rep)
        return EXIT_OK
    if obj == "mass" or obj.startswith("state:"):
        if obj.startswith("state:"):
            x = _state(obj[6:])
            f = np.zeros(len(T))
            f[T.index_of(x)] = 1.0
            name = f"state {x}"
        else:
            f = np.ones(len(T))
            name = "mass"
        if cfg.scheme == "ilp":
            r = ilp_bounds(build_polytope(net, T, cfg.w, cfg.moment_c, cfg.trunc_r), [f], [name])
            lo, hi = float(r.lower[0]), float(r.upper[0])
        else:
            pair = (bdp_bounds(BirthDeathSpec.from_network(net), len(T), cfg.moment_c) if cfg.scheme == "bdp"
                    else ita_bounds(ita_sweep(net, T), cfg.moment_c, cfg.trunc_r))
            lo = float(pair.lower.values @ f) if pair.lower is not None else float("nan")
            hi = float(pair.upper.values @ f)
            if obj == "mass":
                hi = min(hi, 1.0)
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows([("objective", "lower", "upper"), (name, repr(lo), repr(hi))])
        _write(cfg.out, ".csv", buf.getvalue())
        rep = ErrorReport(cfg.scheme, truncation_id(T))
        rep.add("lower", lo, RIGOROUS)
        rep.add("upper", hi, RIGOROUS, "" if obj == "mass" or cfg.scheme == "ilp" else "on states of the truncation")
        _write_report(cfg, rep)
        return EXIT_OK
    raise UsageError(f"unknown objective {obj!r}")


def cmd_compare(args) -> int:
    case = default_case(args.case)
    schemes = tuple(s.strip() for s in args.schemes.split(",")) if args.schemes else None
    if schemes:
        bad = [s for s in schemes if s not in case.schemes]
        if bad:
            raise UsageError(f"schemes {bad} are not part of the {args.case} case ({', '.join(case.schemes)})")
    rs = tuple(float(v) for v in args.trunc_r.split(",")) if args.trunc_r else None
    rows = compare_schemes(case, args.threads, schemes, rs)
    _write(args.out, "", write_compare_csv(rows))
    for row in rows:
        if row.error:
            sys.stderr.write(f"{row.scheme} r={row.r:g}: {row.error}\n")
    return EXIT_OK


def cmd_simulate(args) -> int:
    net = load_model(args.model)
    run = gillespie(net, _state(args.x0), args.t_final, args.seed, jump_cap=args.jump_cap, burn_in=args.burn_in)
    _write(args.out, "", empirical_distribution(run).to_csv(net.species, column="fraction"))
    return EXIT_OK


def cmd_classes(args) -> int:
    net = load_model(args.model)
    T = _truncation(net, args.trunc_w, args.trunc_r, trunc_file=args.trunc_file)
    cd = communicating_classes(net, T)
    print(f"truncation: {len(T)} states")
    print(f"closed classes: {len(cd.closed_classes)}")
    for k, c in enumerate(cd.closed_classes):
        head = ", ".join(str(T.state(i)) for i in c[:8])
        more = f", ... ({len(c)} states)" if len(c) > 8 else ""
        print(f"  class {k}: {head}{more}")
    print(f"transient states: {len(cd.transient)}")
    print(f"note: {cd.note}")
    return EXIT_OK


def _parse_F(text: str):
    if "<" not in text:
        raise UsageError("--F must look like 'expr < value'")
    expr, val = text.split("<", 1)
    return parse_expr(expr), float(val)


def cmd_drift_check(args) -> int:
    net = load_model(args.model)
    check = build_sublevel_truncation(net, args.trunc_w, args.trunc_r)
    Fexpr, Fr = _parse_F(args.F)
    F = check.states[net.eval_expr(Fexpr, check.states) < Fr]
    if len(F) == 0:
        raise UsageError("F is empty on the check set")
    cert = drift_apply(net, args.v, args.f, F, check, d=args.d)
    rep = cert.report()
    rep.add("F_size", len(cert.F), HEURISTIC)
    rep.add("check_size", cert.check_size, HEURISTIC)
    if args.beta is not None:
        if not args.reentry or not args.reentry.startswith("state:") or args.bound_r is None:
            raise UsageError("TA error bounds need --reentry state:..., --beta and --bound-r")
        z = _state(args.reentry[6:])
        T = build_sublevel_truncation(net, args.trunc_w, args.bound_r)
        naive = liu_bound(net, T, z, cert, args.beta)
        tb = tighten_bound_lp(net, T, z, cert, args.beta)
        rep.add("ta_tv_bound", naive, RIGOROUS, "given the certificate; " + cert.note)
        rep.add("ta_tv_bound_refined", tb.bound, RIGOROUS, "given the certificate; " + cert.note)
        rep.add("phi_bar", tb.meta["phi_bar"], HEURISTIC)
        rep.add("outflow", tb.meta["outflow"], HEURISTIC)
    doc = rep.to_dict()
    doc["F"] = [list(map(int, s)) for s in cert.F.tolist()]
    _write(args.out, "", json.dumps(doc, indent=2, allow_nan=False) + "\n")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "bounds": cmd_bounds, "compare": cmd_compare, "simulate": cmd_simulate,
            "classes": cmd_classes, "drift-check": cmd_drift_check}

_USAGE_ERRORS = (UsageError, ModelError, ModelSyntaxError, FileNotFoundError, KeyError, DriftError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except _USAGE_ERRORS as exc:
        sys.stderr.write(f"srnstat: error: {exc}\n")
        return EXIT_USAGE
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"srnstat: numerical failure: {type(exc).__name__}: {exc}\n")
        return EXIT_NUMERIC
    except ValueError as exc:
        sys.stderr.write(f"srnstat: error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
