"""Nestable forward-mode dual numbers.

A `Dual(a, b)` represents a + b·ε with ε² = 0.  Both parts may themselves be
duals, so nesting k levels deep carries exact derivatives up to order k.
"""

from __future__ import annotations

import math

from .errors import DomainError


def primal(x):
    """Innermost real value of a possibly nested dual."""
    while isinstance(x, Dual):
        x = x.a
    return x


class Dual:
    __slots__ = ("a", "b")

    def __init__(self, a, b=0.0):
        self.a = a
        self.b = b

    def __repr__(self):
        return f"Dual({self.a!r}, {self.b!r})"

    def __add__(self, o):
        if isinstance(o, Dual):
            return Dual(self.a + o.a, self.b + o.b)
        return Dual(self.a + o, self.b)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.a, -self.b)

    def __sub__(self, o):
        if isinstance(o, Dual):
            return Dual(self.a - o.a, self.b - o.b)
        return Dual(self.a - o, self.b)

    def __rsub__(self, o):
        return Dual(o - self.a, -self.b)

    def __mul__(self, o):
        if isinstance(o, Dual):
            return Dual(self.a * o.a, self.a * o.b + self.b * o.a)
        return Dual(self.a * o, self.b * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Dual):
            if primal(o) == 0:
                raise DomainError("division by zero")
            return Dual(self.a / o.a, (self.b * o.a - self.a * o.b) / (o.a * o.a))
        if o == 0:
            raise DomainError("division by zero")
        return Dual(self.a / o, self.b / o)

    def __rtruediv__(self, o):
        if primal(self) == 0:
            raise DomainError("division by zero")
        return Dual(o / self.a, -o * self.b / (self.a * self.a))

    def __pow__(self, c):
        if isinstance(c, Dual):
            raise DomainError("exponent must be a constant")
        v = primal(self)
        if v < 0 and float(c) != int(c):
            raise DomainError("fractional power of a negative base")
        if v == 0 and c < 1 and c != 0:
            raise DomainError("non-differentiable power at zero")
        if c == 0:
            return Dual(self.a ** 0, self.b * 0)
        return Dual(self.a ** c, c * self.a ** (c - 1) * self.b)

    def __abs__(self):
        v = primal(self)
        if v == 0:
            raise DomainError("abs is not differentiable at 0")
        s = 1.0 if v > 0 else -1.0
        return self * s

    def exp(self):
        e = _call("exp", self.a)
        return Dual(e, self.b * e)

    def log(self):
        if primal(self) <= 0:
            raise DomainError("log of non-positive value")
        return Dual(_call("log", self.a), self.b / self.a)

    def sqrt(self):
        if primal(self) <= 0:
            raise DomainError("sqrt of non-positive value")
        r = _call("sqrt", self.a)
        return Dual(r, self.b / (2 * r))

    def sin(self):
        return Dual(_call("sin", self.a), self.b * _call("cos", self.a))

    def cos(self):
        return Dual(_call("cos", self.a), -self.b * _call("sin", self.a))

    def tan(self):
        t = _call("tan", self.a)
        return Dual(t, self.b * (1 + t * t))

    def sinh(self):
        return Dual(_call("sinh", self.a), self.b * _call("cosh", self.a))

    def cosh(self):
        return Dual(_call("cosh", self.a), self.b * _call("sinh", self.a))

    def tanh(self):
        t = _call("tanh", self.a)
        return Dual(t, self.b * (1 - t * t))


def _call(name, x):
    if isinstance(x, Dual):
        return getattr(x, name)()
    v = float(x)
    if name == "log" and v <= 0:
        raise DomainError("log of non-positive value")
    if name == "sqrt" and v < 0:
        raise DomainError("sqrt of negative value")
    return getattr(math, name)(v)


def derivative(f, x: float, order: int = 1) -> float:
    """order-th derivative of a univariate callable at x by nesting duals."""
    seed = x
    for _ in range(order):
        seed = Dual(seed, 1.0)
    out = f(seed)
    for _ in range(order):
        if not isinstance(out, Dual):
            return 0.0
        out = out.b
    return float(primal(out))
