"""Coefficient expression mini-language.

Coefficient fields a(x1, y1, y2) and rho(x1, y1, y2) are entered as small
arithmetic expressions.  The grammar (whitespace-insensitive):

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?        right-associative; binds tighter than unary minus
    atom   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'

Variables are x1 (slow axial coordinate), y1 and y2 (fast cell coordinates).
``pi`` is the only named constant; sin, cos, exp, sqrt, abs the only functions.
There are no conditionals and no user-defined functions, so evaluation is
branch-free and vectorizes over numpy arrays.

ASTs are immutable; :func:`evaluate` is pure and thread-safe.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

VARIABLES = ("x1", "y1", "y2")
FUNCTIONS = ("sin", "cos", "exp", "sqrt", "abs")
CONSTANTS = {"pi": math.pi}


class ExprError(ValueError):
    """Base class for expression-language failures."""


class ExprSyntaxError(ExprError):
    """Malformed source text; message carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class EvalError(ExprError):
    """Runtime evaluation failure: division by zero or domain error."""


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Name:
    # variable x1/y1/y2 or the named constant pi
    ident: str


@dataclass(frozen=True)
class Neg:
    arg: "ExprAst"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "ExprAst"
    right: "ExprAst"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "ExprAst"


ExprAst = Union[Num, Name, Neg, BinOp, Call]

_TOKEN_RE = re.compile(
    r"""(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
      | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
      | (?P<op>[-+*/^()])
      | (?P<ws>\s+)
      | (?P<bad>.)""",
    re.VERBOSE,
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    for m in _TOKEN_RE.finditer(source):
        kind = m.lastgroup
        if kind == "ws":
            continue
        if kind == "bad":
            raise ExprSyntaxError(f"unexpected character {m.group()!r}", m.start())
        tokens.append((kind, m.group(), m.start()))
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.pos = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.pos]

    def advance(self) -> tuple[str, str, int]:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str) -> None:
        kind, text, off = self.peek()
        if kind != "op" or text != op:
            raise ExprSyntaxError(f"expected {op!r}", off)
        self.advance()

    def parse(self) -> ExprAst:
        node = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected trailing input {text!r}", off)
        return node

    def expr(self) -> ExprAst:
        node = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                node = BinOp(text, node, self.term())
            else:
                return node

    def term(self) -> ExprAst:
        node = self.unary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                node = BinOp(text, node, self.unary())
            else:
                return node

    def unary(self) -> ExprAst:
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> ExprAst:
        base = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            # exponent parsed as unary so 2^-3 works; recursion gives right associativity
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> ExprAst:
        kind, text, off = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "ident":
            nxt_kind, nxt_text, _ = self.peek()
            if nxt_kind == "op" and nxt_text == "(":
                if text not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {text!r}", off)
                self.advance()
                arg = self.expr()
                self.expect_op(")")
                return Call(text, arg)
            if text in VARIABLES or text in CONSTANTS:
                return Name(text)
            raise ExprSyntaxError(f"unknown identifier {text!r}", off)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExprSyntaxError(f"unexpected token {text!r}", off)


def parse(source: str) -> ExprAst:
    """Parse expression source into an immutable AST.

    Raises ExprSyntaxError (with byte offset) on malformed input or unknown
    identifiers.
    """
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(source).parse()


_UFUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs}


def evaluate(ast: ExprAst, x1, y1, y2):
    """Evaluate an AST at (x1, y1, y2); inputs may be scalars or broadcastable arrays.

    IEEE double arithmetic throughout.  Raises EvalError on division by zero,
    sqrt of a negative number, or a power whose result is not finite.
    """
    env = {"x1": x1, "y1": y1, "y2": y2}
    result = _eval(ast, env)
    return result


def _eval(ast: ExprAst, env: dict):
    if isinstance(ast, Num):
        return ast.value
    if isinstance(ast, Name):
        if ast.ident in CONSTANTS:
            return CONSTANTS[ast.ident]
        return env[ast.ident]
    if isinstance(ast, Neg):
        return np.negative(_eval(ast.arg, env))
    if isinstance(ast, Call):
        arg = _eval(ast.arg, env)
        if ast.func == "sqrt":
            if np.any(np.asarray(arg) < 0):
                raise EvalError("sqrt of negative value")
            return np.sqrt(arg)
        return _UFUNCS[ast.func](arg)
    if isinstance(ast, BinOp):
        a = _eval(ast.left, env)
        b = _eval(ast.right, env)
        if ast.op == "+":
            return np.add(a, b)
        if ast.op == "-":
            return np.subtract(a, b)
        if ast.op == "*":
            return np.multiply(a, b)
        if ast.op == "/":
            if np.any(np.asarray(b) == 0):
                raise EvalError("division by zero")
            return np.divide(a, b)
        if ast.op == "^":
            with np.errstate(invalid="ignore", divide="ignore"):
                r = np.power(np.asarray(a, dtype=float), b)
            if not np.all(np.isfinite(r)):
                raise EvalError("domain error in '^' (negative base with fractional exponent, or 0 to a negative power)")
            return r if np.ndim(a) or np.ndim(b) else float(r)
    raise TypeError(f"not an expression node: {ast!r}")


def to_source(ast: ExprAst) -> str:
    """Pretty-print an AST.  Fully parenthesized, so re-parsing reproduces the
    identical tree (and therefore bit-identical evaluation)."""
    if isinstance(ast, Num):
        return repr(ast.value)
    if isinstance(ast, Name):
        return ast.ident
    if isinstance(ast, Neg):
        return f"(-{to_source(ast.arg)})"
    if isinstance(ast, Call):
        return f"{ast.func}({to_source(ast.arg)})"
    if isinstance(ast, BinOp):
        return f"({to_source(ast.left)} {ast.op} {to_source(ast.right)})"
    raise TypeError(f"not an expression node: {ast!r}")


def free_names(ast: ExprAst) -> frozenset[str]:
    """Set of variable names the expression actually references (pi excluded)."""
    if isinstance(ast, Num):
        return frozenset()
    if isinstance(ast, Name):
        return frozenset((ast.ident,)) if ast.ident in VARIABLES else frozenset()
    if isinstance(ast, Neg):
        return free_names(ast.arg)
    if isinstance(ast, Call):
        return free_names(ast.arg)
    if isinstance(ast, BinOp):
        return free_names(ast.left) | free_names(ast.right)
    raise TypeError(f"not an expression node: {ast!r}")
