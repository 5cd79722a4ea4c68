"""Arithmetic expressions used for propensities, norm-like functions and objectives.

Expressions are small immutable trees.  They evaluate elementwise, so the same
tree works on a single state (scalars) or on a whole block of states (numpy
columns), which is how every scheme in the package consumes them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np


class ModelSyntaxError(ValueError):
    """Raised for malformed model text; carries a 1-based line and column."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line else ""
        super().__init__(where + message)


class ExprEvalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Num:
    value: float

    def eval(self, env):
        return self.value

    def names(self):
        return set()


@dataclass(frozen=True)
class Var:
    name: str

    def eval(self, env):
        return env[self.name]

    def names(self):
        return {self.name}


@dataclass(frozen=True)
class _Binary:
    left: "Expr"
    right: "Expr"

    def names(self):
        return self.left.names() | self.right.names()


@dataclass(frozen=True)
class Add(_Binary):
    def eval(self, env):
        return self.left.eval(env) + self.right.eval(env)


@dataclass(frozen=True)
class Sub(_Binary):
    def eval(self, env):
        return self.left.eval(env) - self.right.eval(env)


@dataclass(frozen=True)
class Mul(_Binary):
    def eval(self, env):
        return self.left.eval(env) * self.right.eval(env)


@dataclass(frozen=True)
class Div(_Binary):
    def eval(self, env):
        num = self.left.eval(env)
        den = self.right.eval(env)
        if np.any(np.asarray(den) == 0):
            raise ExprEvalError(f"division by zero in {to_text(self)}")
        return num / den


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int

    def eval(self, env):
        return self.base.eval(env) ** self.exponent

    def names(self):
        return self.base.names()


Expr = Union[Num, Var, Add, Sub, Mul, Div, Pow]

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Pow: 3, Num: 4, Var: 4}
_SYMBOL = {Add: "+", Sub: "-", Mul: "*", Div: "/"}


def _fmt_number(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def to_text(e: Expr) -> str:
    """Render an expression so that parsing the text gives back the same tree."""
    if isinstance(e, Num):
        return _fmt_number(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Pow):
        inner = to_text(e.base)
        if _PREC[type(e.base)] <= _PREC[Pow]:
            inner = f"({inner})"
        return f"{inner}^{e.exponent}"
    p = _PREC[type(e)]
    left = to_text(e.left)
    right = to_text(e.right)
    if _PREC[type(e.left)] < p:
        left = f"({left})"
    # the parser is left-associative, so equal precedence on the right needs parens
    if _PREC[type(e.right)] <= p:
        right = f"({right})"
    return f"{left} {_SYMBOL[type(e)]} {right}"


# --------------------------------------------------------------------------- lexing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<arrow>->)
  | (?P<op>[-+*/^():=,])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str, line: int = 1, col0: int = 1) -> list[Token]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ModelSyntaxError(f"unexpected character {text[pos]!r}", line, col0 + pos)
        kind = m.lastgroup
        if kind != "ws":
            out.append(Token(kind, m.group(), line, col0 + pos))
        pos = m.end()
    out.append(Token("end", "", line, col0 + len(text)))
    return out


class TokenStream:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def peek(self) -> Token:
        return self.tokens[self.i]

    def next(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def accept(self, text: str) -> bool:
        if self.peek.text == text and self.peek.kind in ("op", "arrow", "ident"):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        tok = self.peek
        if tok.text != text:
            raise ModelSyntaxError(f"expected {text!r}, found {tok.text or 'end of line'!r}", tok.line, tok.col)
        return self.next()

    def error(self, msg: str):
        tok = self.peek
        raise ModelSyntaxError(msg, tok.line, tok.col)


def parse_expr_tokens(ts: TokenStream) -> Expr:
    node = _parse_mul(ts)
    while ts.peek.text in ("+", "-") and ts.peek.kind == "op":
        op = ts.next().text
        rhs = _parse_mul(ts)
        node = Add(node, rhs) if op == "+" else Sub(node, rhs)
    return node


def _parse_mul(ts: TokenStream) -> Expr:
    node = _parse_pow(ts)
    while ts.peek.text in ("*", "/") and ts.peek.kind == "op":
        op = ts.next().text
        rhs = _parse_pow(ts)
        node = Mul(node, rhs) if op == "*" else Div(node, rhs)
    return node


def _parse_pow(ts: TokenStream) -> Expr:
    base = _parse_atom(ts)
    if ts.peek.text == "^":
        ts.next()
        tok = ts.peek
        if tok.kind != "number" or not tok.text.isdigit():
            raise ModelSyntaxError("exponent must be a nonnegative integer literal", tok.line, tok.col)
        ts.next()
        return Pow(base, int(tok.text))
    return base


def _parse_atom(ts: TokenStream) -> Expr:
    tok = ts.peek
    if tok.kind == "number":
        ts.next()
        return Num(float(tok.text))
    if tok.kind == "ident":
        ts.next()
        return Var(tok.text)
    if tok.text == "(":
        ts.next()
        node = parse_expr_tokens(ts)
        ts.expect(")")
        return node
    raise ModelSyntaxError(f"unexpected {tok.text or 'end of line'!r} in expression", tok.line, tok.col)


def parse_expr(text: str) -> Expr:
    """Parse a standalone expression such as ``"(S1 + S2)^6"``."""
    ts = TokenStream(tokenize(text))
    node = parse_expr_tokens(ts)
    if ts.peek.kind != "end":
        ts.error(f"trailing input {ts.peek.text!r}")
    return node


def evaluate(e: Expr, env: Mapping[str, object]):
    """Evaluate ``e`` with names bound in ``env``; arrays broadcast elementwise."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return e.eval(env)
