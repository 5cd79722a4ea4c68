"""Reaction-network models: parsing, propensities, and the chain's jump structure.

Model files are line oriented::

    # Schlogl's autocatalytic network
    species S
    param k1 = 0.025
    reaction 2 S -> 3 S : mass_action(k1)
    reaction 0 -> S     : 60

``mass_action(k)`` expands to ``k * x (x - 1) ... (x - nu + 1)`` over the
reactant stoichiometry.  Everything else is an explicit rational expression in
species counts and parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .expr import (
    Expr,
    ExprEvalError,
    ModelSyntaxError,
    Token,
    TokenStream,
    evaluate,
    parse_expr_tokens,
    to_text,
    tokenize,
)

State = tuple  # tuple[int, ...] of nonnegative molecule counts


class ModelError(ValueError):
    """Semantic problems with a model: unknown names, bad propensities, invalid jumps."""


@dataclass(frozen=True)
class MassAction:
    rate: Expr

    def names(self):
        return self.rate.names()


@dataclass(frozen=True)
class Reaction:
    nu_minus: tuple
    nu_plus: tuple
    propensity: object  # Expr or MassAction
    nu: tuple = field(init=False, compare=False)

    def __post_init__(self):
        if any(v < 0 for v in self.nu_minus) or any(v < 0 for v in self.nu_plus):
            raise ModelError("stoichiometric coefficients must be nonnegative")
        object.__setattr__(self, "nu", tuple(p - m for p, m in zip(self.nu_plus, self.nu_minus)))


@dataclass(frozen=True)
class ReactionNetwork:
    species: tuple
    params: tuple  # ((name, value), ...) in declaration order
    reactions: tuple

    def __post_init__(self):
        if len(set(self.species)) != len(self.species):
            raise ModelError("species names must be unique")
        object.__setattr__(self, "_nu", np.array([r.nu for r in self.reactions], dtype=np.int64).reshape(len(self.reactions), len(self.species)))

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    @property
    def param_dict(self) -> dict:
        return dict(self.params)

    @property
    def nu(self) -> np.ndarray:
        """Net change vectors, one row per reaction."""
        return self._nu

    def env(self, X: np.ndarray) -> dict:
        X = np.asarray(X)
        env = {name: float(v) for name, v in self.params}
        for i, s in enumerate(self.species):
            env[s] = X[..., i].astype(float)
        return env

    def eval_expr(self, e: Expr, X) -> np.ndarray:
        """Evaluate an expression over species and parameters at each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        try:
            out = evaluate(e, self.env(X))
        except ExprEvalError as exc:
            bad = _first_bad_state(e, self, X)
            raise ModelError(f"{exc} at state {bad}") from None
        return np.broadcast_to(np.asarray(out, dtype=float), (X.shape[0],)).copy()

    def propensities(self, X) -> np.ndarray:
        """Propensity matrix ``A[k, j] = a_j(X[k])``, validated.

        Raises ModelError when a propensity is negative or not finite, or when a
        reaction with positive propensity would leave the nonnegative orthant.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        A = np.empty((X.shape[0], self.n_reactions))
        env = None
        for j, rxn in enumerate(self.reactions):
            prop = rxn.propensity
            if isinstance(prop, MassAction):
                if env is None:
                    env = self.env(X)
                k = np.broadcast_to(np.asarray(evaluate(prop.rate, env), dtype=float), (X.shape[0],))
                a = k.copy()
                for i, nm in enumerate(rxn.nu_minus):
                    for t in range(nm):
                        a = a * (X[:, i] - t)
            else:
                a = self.eval_expr(prop, X)
            A[:, j] = a
        bad = ~np.isfinite(A)
        if bad.any():
            k, j = np.argwhere(bad)[0]
            raise ModelError(f"propensity of reaction {j} is not finite at state {tuple(int(v) for v in X[k])}")
        neg = A < 0
        if neg.any():
            k, j = np.argwhere(neg)[0]
            raise ModelError(f"propensity of reaction {j} is negative ({A[k, j]:g}) at state {tuple(int(v) for v in X[k])}")
        A[A == 0] = 0.0  # drop signed zeros from falling factorials
        if self.n_reactions:
            targets = X[:, None, :] + self._nu[None, :, :]
            escape = (targets < 0).any(axis=2) & (A > 0)
            if escape.any():
                k, j = np.argwhere(escape)[0]
                raise ModelError(f"reaction {j} fires at state {tuple(int(v) for v in X[k])} but its target has a negative count")
        return A


def _first_bad_state(e, net, X):
    for row in X:
        try:
            val = evaluate(e, net.env(row[None, :]))
            if not np.all(np.isfinite(val)):
                return tuple(int(v) for v in row)
        except ExprEvalError:
            return tuple(int(v) for v in row)
    return None


# --------------------------------------------------------------------------- jump structure


def rate_row(net: ReactionNetwork, x: Sequence[int]) -> list:
    """Off-diagonal entries of the rate matrix row at ``x`` as ``[(y, q(x, y)), ...]``.

    Reactions sharing a net change vector are aggregated here; zero rates and
    self-loops are left out.
    """
    x = tuple(int(v) for v in x)
    if len(x) != net.n_species or any(v < 0 for v in x):
        raise ModelError(f"invalid state {x}")
    a = net.propensities(np.array([x]))[0]
    rates: dict = {}
    for j, rxn in enumerate(net.reactions):
        if a[j] <= 0 or not any(rxn.nu):
            continue
        y = tuple(xi + d for xi, d in zip(x, rxn.nu))
        rates[y] = rates.get(y, 0.0) + float(a[j])
    return [(y, q) for y, q in rates.items() if q > 0]


def exit_rate(net: ReactionNetwork, x) -> float:
    total = 0.0
    for _, q in rate_row(net, x):
        total += q
    return total


def jump_probs(net: ReactionNetwork, x) -> dict:
    """Embedded jump-chain row at ``x``; an absorbing state maps to itself with probability one."""
    row = rate_row(net, x)
    q = 0.0
    for _, rate in row:
        q += rate
    if q == 0.0:
        return {tuple(int(v) for v in x): 1.0}
    return {y: rate / q for y, rate in row}


# --------------------------------------------------------------------------- parsing


def _parse_side(ts: TokenStream) -> list:
    """A reaction side as ``[(coefficient, species_token), ...]``; ``0`` is the empty complex."""
    if ts.peek.kind == "number" and ts.peek.text == "0":
        nxt = ts.tokens[ts.i + 1]
        if nxt.kind != "ident":
            ts.next()
            return []
    terms = []
    while True:
        coef = 1
        if ts.peek.kind == "number":
            tok = ts.next()
            if not tok.text.isdigit():
                raise ModelSyntaxError("stoichiometric coefficient must be a nonnegative integer", tok.line, tok.col)
            coef = int(tok.text)
        tok = ts.peek
        if tok.kind != "ident":
            ts.error("expected a species name")
        ts.next()
        terms.append((coef, tok))
        if not (ts.peek.kind == "op" and ts.peek.text == "+"):
            return terms
        ts.next()


def _collect_idents(tokens: Iterable[Token]) -> list:
    return [t for t in tokens if t.kind == "ident" and t.text != "mass_action"]


def parse_model(text: str) -> ReactionNetwork:
    """Parse model-file text into a fully resolved ReactionNetwork."""
    species: list = []
    params: list = []
    raw_reactions = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        tokens = tokenize(line, lineno)
        ts = TokenStream(tokens)
        head = ts.peek
        if head.kind != "ident":
            ts.error("expected 'species', 'param' or 'reaction'")
        ts.next()
        if head.text == "species":
            if ts.peek.kind != "ident":
                ts.error("expected at least one species name")
            while ts.peek.kind == "ident":
                tok = ts.next()
                if tok.text in species:
                    raise ModelSyntaxError(f"species {tok.text!r} declared twice", tok.line, tok.col)
                species.append(tok.text)
        elif head.text == "param":
            name = ts.peek
            if name.kind != "ident":
                ts.error("expected parameter name")
            ts.next()
            ts.expect("=")
            num = ts.peek
            if num.kind != "number":
                ts.error("expected a number")
            ts.next()
            params.append((name.text, float(num.text), name))
        elif head.text == "reaction":
            left = _parse_side(ts)
            ts.expect("->")
            right = _parse_side(ts)
            ts.expect(":")
            start = ts.i
            if ts.peek.kind == "ident" and ts.peek.text == "mass_action":
                ts.next()
                ts.expect("(")
                rate = parse_expr_tokens(ts)
                ts.expect(")")
                prop = MassAction(rate)
            else:
                prop = parse_expr_tokens(ts)
            idents = _collect_idents(tokens[start:ts.i])
            raw_reactions.append((left, right, prop, idents, head))
        else:
            raise ModelSyntaxError(f"unknown declaration {head.text!r}", head.line, head.col)
        if ts.peek.kind != "end":
            ts.error(f"unexpected {ts.peek.text!r}")

    pnames = [p[0] for p in params]
    for name, _, tok in params:
        if name in species:
            raise ModelSyntaxError(f"parameter {name!r} clashes with a species name", tok.line, tok.col)
        if pnames.count(name) > 1:
            raise ModelSyntaxError(f"parameter {name!r} declared twice", tok.line, tok.col)
    known = set(species) | set(pnames)
    pvals = {name: v for name, v, _ in params}
    index = {s: i for i, s in enumerate(species)}
    reactions = []
    for left, right, prop, idents, head in raw_reactions:
        nu_minus = [0] * len(species)
        nu_plus = [0] * len(species)
        for side, vec in ((left, nu_minus), (right, nu_plus)):
            for coef, tok in side:
                if tok.text not in index:
                    raise ModelSyntaxError(f"unknown species {tok.text!r}", tok.line, tok.col)
                vec[index[tok.text]] += coef
        for tok in idents:
            if tok.text not in known:
                raise ModelSyntaxError(f"unknown identifier {tok.text!r}", tok.line, tok.col)
        if isinstance(prop, MassAction) and not (prop.rate.names() & set(species)):
            k = float(evaluate(prop.rate, pvals))
            if k < 0:
                raise ModelSyntaxError(f"negative rate constant {k:g}", head.line, head.col)
        reactions.append(Reaction(tuple(nu_minus), tuple(nu_plus), prop))
    return ReactionNetwork(tuple(species), tuple((n, v) for n, v, _ in params), tuple(reactions))


def load_model(path) -> ReactionNetwork:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


def _side_text(net: ReactionNetwork, vec) -> str:
    terms = []
    for s, k in zip(net.species, vec):
        if k == 1:
            terms.append(s)
        elif k > 1:
            terms.append(f"{k} {s}")
    return " + ".join(terms) if terms else "0"


def format_model(net: ReactionNetwork) -> str:
    """Pretty-print a network in model-file syntax (inverse of parse_model)."""
    lines = []
    if net.species:
        lines.append("species " + " ".join(net.species))
    for name, v in net.params:
        lines.append(f"param {name} = {v!r}")
    for rxn in net.reactions:
        prop = rxn.propensity
        ptxt = f"mass_action({to_text(prop.rate)})" if isinstance(prop, MassAction) else to_text(prop)
        lines.append(f"reaction {_side_text(net, rxn.nu_minus)} -> {_side_text(net, rxn.nu_plus)} : {ptxt}")
    return "\n".join(lines) + "\n"
