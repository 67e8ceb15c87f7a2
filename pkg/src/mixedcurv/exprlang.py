"""A small arithmetic language for metric components and variation profiles.

Grammar (lowest to highest precedence)::

    expr  := term (("+" | "-") term)*
    term  := unary (("*" | "/") unary)*
    unary := "-" unary | power
    power := atom ("^" unary)?
    atom  := NUMBER | NAME | NAME "(" expr ")" | "(" expr ")"

`^` is right-associative and binds tighter than unary minus, so ``-x0^2`` is
``-(x0^2)``.  A minus sign written directly before a number literal folds into
the literal.  Exponents must not mention coordinates.

Evaluation is generic: coordinates may be floats, numpy arrays, `Dual`s or
`Jet`s, and every function dispatches on the argument type.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, ExprSyntaxError, UnboundParameter, UnknownSymbol

FUNCTIONS = ("exp", "log", "sqrt", "sin", "cos", "tan", "sinh", "cosh", "tanh", "abs")
CONSTANTS = {"pi": math.pi}
_COORD = re.compile(r"x(\d+)\Z")


class Expr:
    __slots__ = ()

    def __str__(self):
        return to_source(self)


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Sym(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Bin(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr


def is_coordinate(name: str) -> bool:
    return _COORD.match(name) is not None


# tokenizer ------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    while True:
        while pos < len(source) and source[pos].isspace():
            pos += 1
        if pos >= len(source):
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(_byte_offset(source, pos), "number, name, operator or parenthesis", source)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


def _byte_offset(source: str, index: int) -> int:
    return len(source[:index].encode("utf-8"))


class _Parser:
    def __init__(self, source: str, symbols, ncoords):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0
        self.symbols = None if symbols is None else set(symbols)
        self.ncoords = ncoords

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected: str):
        kind, text, start = self.peek()
        raise ExprSyntaxError(_byte_offset(self.source, start), expected, self.source)

    def expect(self, text: str):
        kind, t, _ = self.peek()
        if kind == "op" and t == text:
            return self.take()
        self.fail(repr(text))

    def parse(self) -> Expr:
        e = self.expr()
        if self.peek()[0] != "end":
            self.fail("operator or end of input")
        return e

    def expr(self):
        e = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            e = Bin(op, e, self.term())
        return e

    def term(self):
        e = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            e = Bin(op, e, self.unary())
        return e

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            literal = self.peek()[0] == "num"
            inner = self.unary()
            if literal and isinstance(inner, Num):
                return Num(-inner.value)
            return Neg(inner)
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            start = self.peek()[2]
            exponent = self.unary()
            if any(is_coordinate(s) for s in symbols_of(exponent)):
                raise ExprSyntaxError(_byte_offset(self.source, start), "constant exponent", self.source)
            return Bin("^", base, exponent)
        return base

    def atom(self):
        kind, text, start = self.peek()
        if kind == "num":
            self.take()
            return Num(float(text))
        if kind == "name":
            self.take()
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                if text not in FUNCTIONS:
                    raise UnknownSymbol(text)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            self._check_symbol(text)
            return Sym(text)
        if kind == "op" and text == "(":
            self.take()
            e = self.expr()
            self.expect(")")
            return e
        self.fail("number, name or '('")

    def _check_symbol(self, name: str):
        if name in FUNCTIONS:
            raise UnknownSymbol(name)
        m = _COORD.match(name)
        if m is not None:
            if self.ncoords is not None and int(m.group(1)) >= self.ncoords:
                raise UnknownSymbol(name)
            return
        if name in CONSTANTS:
            return
        if self.symbols is not None and name not in self.symbols:
            raise UnknownSymbol(name)


def parse(source: str, params: Sequence[str] | None = None, ncoords: int | None = None) -> Expr:
    """Parse source text.

    When `params` is given, names other than coordinates, constants and those
    params raise UnknownSymbol; `ncoords` bounds the coordinate index.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    return _Parser(source, params, ncoords).parse()


def symbols_of(e: Expr) -> set[str]:
    if isinstance(e, Sym):
        return {e.name}
    if isinstance(e, Num):
        return set()
    if isinstance(e, (Neg, Call)):
        return symbols_of(e.arg)
    return symbols_of(e.left) | symbols_of(e.right)


# printing -------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _format_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v)) if v != 0 or math.copysign(1, v) > 0 else "-0"
    return repr(v)


def _prec(e: Expr) -> int:
    if isinstance(e, Num):
        return 3 if e.value < 0 or math.copysign(1, e.value) < 0 else 5
    if isinstance(e, Neg):
        return 3
    if isinstance(e, Bin):
        return _PREC[e.op]
    return 5


def _wrap(e: Expr, min_prec: int) -> str:
    s = to_source(e)
    return f"({s})" if _prec(e) < min_prec else s


def to_source(e: Expr) -> str:
    """Pretty-print with the fewest parentheses that keep the tree intact."""
    if isinstance(e, Num):
        return _format_number(e.value)
    if isinstance(e, Sym):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}({to_source(e.arg)})"
    if isinstance(e, Neg):
        inner = _wrap(e.arg, 3)
        if isinstance(e.arg, Num) and not inner.startswith("("):
            inner = f"({inner})"
        sep = " " if inner.startswith("-") else ""
        return f"-{sep}{inner}"
    if e.op in "+-":
        return f"{_wrap(e.left, 1)} {e.op} {_wrap(e.right, 2)}"
    if e.op in "*/":
        return f"{_wrap(e.left, 2)}{e.op}{_wrap(e.right, 3)}"
    return f"{_wrap(e.left, 5)}^{_wrap(e.right, 3)}"


# evaluation -----------------------------------------------------------

_MATH = {name: getattr(math, name) for name in FUNCTIONS if name != "abs"}
_NUMPY = {name: getattr(np, name) for name in FUNCTIONS if name != "abs"}


def _apply(fn: str, x):
    if fn == "abs":
        if isinstance(x, (int, float, np.ndarray)):
            return np.abs(x) if isinstance(x, np.ndarray) else abs(x)
        return abs(x)
    if isinstance(x, (int, float, np.floating)):
        if fn == "log" and x <= 0:
            raise DomainError("log of non-positive value")
        if fn == "sqrt" and x < 0:
            raise DomainError("sqrt of negative value")
        try:
            return _MATH[fn](x)
        except (ValueError, OverflowError) as exc:
            raise DomainError(f"{fn}({x}): {exc}") from None
    if isinstance(x, np.ndarray):
        if fn == "log" and np.any(x <= 0):
            raise DomainError("log of non-positive value")
        if fn == "sqrt" and np.any(x < 0):
            raise DomainError("sqrt of negative value")
        return _NUMPY[fn](x)
    return getattr(x, fn)()


def _power(base, c: float):
    if isinstance(base, (int, float, np.floating)):
        if base < 0 and not float(c).is_integer():
            raise DomainError("fractional power of a negative base")
        if base == 0 and c < 0:
            raise DomainError("division by zero")
        return float(base) ** c
    if isinstance(base, np.ndarray):
        if not float(c).is_integer() and np.any(base < 0):
            raise DomainError("fractional power of a negative base")
        if c < 0 and np.any(base == 0):
            raise DomainError("division by zero")
        return np.power(base, c)
    return base**c


def _divide(a, b):
    if isinstance(b, (int, float, np.floating)) and b == 0:
        raise DomainError("division by zero")
    if isinstance(b, np.ndarray) and np.any(b == 0):
        raise DomainError("division by zero")
    return a / b


def evaluate(e: Expr, point: Sequence, params: Mapping[str, float] | None = None):
    """Evaluate at a point given as a sequence of coordinate scalars."""
    params = params or {}
    return _eval(e, point, params)


def _eval(e, point, params):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Sym):
        m = _COORD.match(e.name)
        if m is not None:
            k = int(m.group(1))
            if k >= len(point):
                raise UnknownSymbol(e.name)
            return point[k]
        if e.name in params:
            return float(params[e.name])
        if e.name in CONSTANTS:
            return CONSTANTS[e.name]
        raise UnboundParameter(e.name)
    if isinstance(e, Neg):
        return -_eval(e.arg, point, params)
    if isinstance(e, Call):
        return _apply(e.fn, _eval(e.arg, point, params))
    if e.op == "^":
        c = _eval(e.right, point, params)
        if not isinstance(c, (int, float, np.floating)):
            raise DomainError("exponent must be a constant")
        return _power(_eval(e.left, point, params), float(c))
    a = _eval(e.left, point, params)
    b = _eval(e.right, point, params)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    return _divide(a, b)


def substitute(e: Expr, params: Mapping[str, float]) -> Expr:
    """Replace named parameters by numeric literals."""
    if isinstance(e, Sym):
        return Num(float(params[e.name])) if e.name in params else e
    if isinstance(e, Num):
        return e
    if isinstance(e, Neg):
        return Neg(substitute(e.arg, params))
    if isinstance(e, Call):
        return Call(e.fn, substitute(e.arg, params))
    return Bin(e.op, substitute(e.left, params), substitute(e.right, params))


def as_expr(value) -> Expr:
    """Accept an Expr, a source string or a number."""
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float)):
        return Num(float(value))
    return parse(value)
