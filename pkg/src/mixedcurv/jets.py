"""Truncated multivariate Taylor jets, batched over points.

A jet array has shape ``(*batch, *tensor, ncoef)``.  The last axis holds the
Taylor coefficients c_α = ∂^α f / α! for every multi-index |α| ≤ order in
``nvars`` variables.  Products are truncated at ``order``; a partial derivative
lowers the number of trustworthy degrees by one and zeroes the top degree, so
reading the value after k ≤ order differentiations is exact.

This is the multivariate generalisation of nesting dual numbers `order` deep:
the same exact derivatives, but vectorised over points and tensor slots.
"""

from __future__ import annotations

import functools
import itertools
import math

import numpy as np

from . import kernels
from .errors import DegenerateMetric, DomainError


def _monomials(nvars: int, order: int) -> list[tuple[int, ...]]:
    out = []
    for deg in range(order + 1):
        degree_block = []
        for combo in itertools.combinations_with_replacement(range(nvars), deg):
            alpha = [0] * nvars
            for v in combo:
                alpha[v] += 1
            degree_block.append(tuple(alpha))
        out.extend(sorted(degree_block, reverse=True))
    return out


class JetSpace:
    """Multiplication and differentiation tables for one (nvars, order)."""

    def __init__(self, nvars: int, order: int):
        self.nvars = nvars
        self.order = order
        self.monomials = _monomials(nvars, order)
        self.ncoef = len(self.monomials)
        index = {a: k for k, a in enumerate(self.monomials)}
        self.index = index
        self.degree = np.array([sum(a) for a in self.monomials])

        triples = []
        for i, a in enumerate(self.monomials):
            for j, b in enumerate(self.monomials):
                if sum(a) + sum(b) <= order:
                    k = index[tuple(x + y for x, y in zip(a, b))]
                    triples.append((k, i, j))
        triples.sort()
        t = np.array(triples, dtype=np.intp)
        self.pk = np.ascontiguousarray(t[:, 0])
        self.pi = np.ascontiguousarray(t[:, 1])
        self.pj = np.ascontiguousarray(t[:, 2])
        self.starts = np.searchsorted(self.pk, np.arange(self.ncoef))

        self._dsrc, self._ddst, self._dfac = [], [], []
        for v in range(nvars):
            src, dst, fac = [], [], []
            for k, a in enumerate(self.monomials):
                if a[v] > 0:
                    b = list(a)
                    b[v] -= 1
                    src.append(k)
                    dst.append(index[tuple(b)])
                    fac.append(float(a[v]))
            self._dsrc.append(np.array(src, dtype=np.intp))
            self._ddst.append(np.array(dst, dtype=np.intp))
            self._dfac.append(np.array(fac))

    # construction -----------------------------------------------------

    def constant(self, value, shape=()) -> np.ndarray:
        value = np.asarray(value, dtype=float)
        out = np.zeros(np.broadcast_shapes(value.shape, shape) + (self.ncoef,))
        out[..., 0] = value
        return out

    def variables(self, points: np.ndarray) -> np.ndarray:
        """Seed jets for the coordinates: shape (*batch, nvars, ncoef)."""
        points = np.asarray(points, dtype=float)
        out = np.zeros(points.shape + (self.ncoef,))
        out[..., 0] = points
        for v in range(self.nvars if self.order > 0 else 0):
            alpha = tuple(1 if w == v else 0 for w in range(self.nvars))
            out[..., v, self.index[alpha]] = 1.0
        return out

    def unit(self, v: int) -> int:
        return self.index[tuple(1 if w == v else 0 for w in range(self.nvars))]

    # algebra ----------------------------------------------------------

    def mul(self, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        shape = np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
        a2 = np.ascontiguousarray(np.broadcast_to(a, shape + (self.ncoef,))).reshape(-1, self.ncoef)
        b2 = np.ascontiguousarray(np.broadcast_to(b, shape + (self.ncoef,))).reshape(-1, self.ncoef)
        out = kernels.backend.jet_mul(a2, b2, self.pi, self.pj, self.pk)
        return out.reshape(shape + (self.ncoef,))

    def einsum(self, subscripts: str, a, b) -> np.ndarray:
        """Two-operand einsum over tensor slots with jet products.

        Subscripts name tensor slots only; leading batch axes are implicit and
        broadcast.  The contraction is lowered to one batched jet matrix
        product, so it runs in the selected kernel backend.
        """
        lhs, out = subscripts.replace(" ", "").split("->")
        sa, sb = lhs.split(",")
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        a, sa = _sum_unused(a, sa, sb + out)
        b, sb = _sum_unused(b, sb, sa + out)
        shared = [c for c in sa if c in sb and c in out]
        inner = [c for c in sa if c in sb and c not in out]
        left = [c for c in sa if c not in sb]
        right = [c for c in sb if c not in sa]
        batch = np.broadcast_shapes(a.shape[: a.ndim - 1 - len(sa)], b.shape[: b.ndim - 1 - len(sb)])
        size = {}
        for c, n in zip(sa, a.shape[a.ndim - 1 - len(sa) : -1]):
            size[c] = n
        for c, n in zip(sb, b.shape[b.ndim - 1 - len(sb) : -1]):
            size[c] = n
        A = _arrange(a, sa, shared + left + inner, batch)
        B = _arrange(b, sb, shared + inner + right, batch)
        nb = int(np.prod(batch, dtype=int)) * int(np.prod([size[c] for c in shared], dtype=int))
        ni = int(np.prod([size[c] for c in left], dtype=int))
        nk = int(np.prod([size[c] for c in inner], dtype=int))
        nj = int(np.prod([size[c] for c in right], dtype=int))
        C = kernels.backend.jet_matmul(
            A.reshape(nb, ni, nk, self.ncoef), B.reshape(nb, nk, nj, self.ncoef), self.pi, self.pj, self.pk
        )
        order = shared + left + right
        C = C.reshape(batch + tuple(size[c] for c in order) + (self.ncoef,))
        nbatch = len(batch)
        perm = list(range(nbatch)) + [nbatch + order.index(c) for c in out] + [C.ndim - 1]
        return np.ascontiguousarray(C.transpose(perm))

    def matmul(self, a, b) -> np.ndarray:
        """Batched jet matrix product over the last two tensor slots."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        batch = np.broadcast_shapes(a.shape[:-3], b.shape[:-3])
        a3 = np.ascontiguousarray(np.broadcast_to(a, batch + a.shape[-3:]))
        b3 = np.ascontiguousarray(np.broadcast_to(b, batch + b.shape[-3:]))
        r, s, nc = a3.shape[-3:]
        t = b3.shape[-2]
        out = kernels.backend.jet_matmul(
            a3.reshape(-1, r, s, nc), b3.reshape(-1, s, t, nc), self.pi, self.pj, self.pk
        )
        return out.reshape(batch + (r, t, nc))

    def div(self, a, b) -> np.ndarray:
        return self.mul(a, self.power(b, -1.0))

    def compose(self, a, taylor) -> np.ndarray:
        """f(a) given taylor[..., k] = f^(k)(a0)/k!, k = 0..order (Horner)."""
        a = np.asarray(a, dtype=float)
        d = a.copy()
        d[..., 0] = 0.0
        r = self.constant(taylor[..., self.order])
        for k in range(self.order - 1, -1, -1):
            r = self.mul(r, d)
            r[..., 0] += taylor[..., k]
        return r

    def power(self, a, c: float) -> np.ndarray:
        a0 = a[..., 0]
        if float(c) != int(c) and np.any(a0 < 0):
            raise DomainError("fractional power of a negative base")
        if c < 1 and c != 0 and np.any(a0 == 0):
            raise DomainError("power not differentiable at zero")
        k = np.arange(self.order + 1)
        binom = np.array([_gbinom(c, j) for j in k])
        with np.errstate(divide="ignore", invalid="ignore"):
            base = np.power(a0[..., None], c - k) if c == int(c) else np.power(np.abs(a0)[..., None], c - k)
        taylor = binom * base
        if c == int(c) and c >= 0:
            taylor[..., k > c] = 0.0
        return self.compose(a, taylor)

    def apply(self, name: str, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        return self.compose(a, taylor_coefficients(name, a[..., 0], self.order))

    def inv_matrix(self, m) -> np.ndarray:
        """Inverse of a jet matrix (last two tensor slots) by a Neumann series."""
        m0 = m[..., 0]
        cond = np.linalg.cond(m0)
        if np.any(~np.isfinite(cond)) or np.any(cond > 1e12):
            raise DegenerateMetric("matrix is singular or ill-conditioned")
        inv0 = self.constant(np.linalg.inv(m0))
        nil = m.copy()
        nil[..., 0] = 0.0
        step = -self.matmul(inv0, nil)
        result = inv0
        term = inv0
        for _ in range(self.order):
            term = self.matmul(step, term)
            result = result + term
        return result

    # differentiation --------------------------------------------------

    def deriv(self, a, v: int) -> np.ndarray:
        out = np.zeros_like(a)
        out[..., self._ddst[v]] = a[..., self._dsrc[v]] * self._dfac[v]
        return out

    def grad(self, a) -> np.ndarray:
        """All partial derivatives; the new slot sits just before the jet axis."""
        return np.stack([self.deriv(a, v) for v in range(self.nvars)], axis=-2)

    def value(self, a) -> np.ndarray:
        return np.asarray(a)[..., 0]

    def pad(self, a) -> np.ndarray:
        """Embed jets of a lower order into this space (missing degrees become zero)."""
        a = np.asarray(a)
        out = np.zeros(a.shape[:-1] + (self.ncoef,))
        out[..., : a.shape[-1]] = a
        return out

    def coefficient(self, a, alpha) -> np.ndarray:
        """∂^α f at the base point (Taylor coefficient times α!)."""
        k = self.index[tuple(alpha)]
        return np.asarray(a)[..., k] * math.prod(math.factorial(x) for x in alpha)


def _sum_unused(x, subs: str, keep: str):
    """Sum out tensor slots that appear nowhere else (jets are linear)."""
    drop = [k for k, c in enumerate(subs) if c not in keep]
    if not drop:
        return x, subs
    base = x.ndim - 1 - len(subs)
    x = x.sum(axis=tuple(base + k for k in drop))
    return x, "".join(c for c in subs if c in keep)


def _arrange(x, subs: str, order, batch) -> np.ndarray:
    base = x.ndim - 1 - len(subs)
    perm = list(range(base)) + [base + subs.index(c) for c in order] + [x.ndim - 1]
    x = x.transpose(perm)
    target = batch + x.shape[base:]
    return np.ascontiguousarray(np.broadcast_to(x, target))


def _gbinom(c: float, k: int) -> float:
    out = 1.0
    for j in range(k):
        out *= (c - j) / (j + 1)
    return out


def _series_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num)
    for k in range(num.shape[-1]):
        acc = num[..., k].copy()
        for j in range(1, k + 1):
            acc -= den[..., j] * out[..., k - j]
        out[..., k] = acc / den[..., 0]
    return out


def taylor_coefficients(name: str, x0: np.ndarray, order: int) -> np.ndarray:
    """f^(k)(x0)/k! for k = 0..order, vectorised over x0."""
    x0 = np.asarray(x0, dtype=float)
    k = np.arange(order + 1)
    fact = np.array([math.factorial(j) for j in k], dtype=float)
    if name == "exp":
        return np.exp(x0)[..., None] / fact
    if name == "log":
        if np.any(x0 <= 0):
            raise DomainError("log of non-positive value")
        out = np.empty(x0.shape + (order + 1,))
        out[..., 0] = np.log(x0)
        for j in range(1, order + 1):
            out[..., j] = (-1.0) ** (j + 1) / (j * x0**j)
        return out
    if name == "sqrt":
        if np.any(x0 <= 0):
            raise DomainError("sqrt of non-positive value")
        binom = np.array([_gbinom(0.5, j) for j in k])
        return binom * np.power(x0[..., None], 0.5 - k)
    if name in ("sin", "cos"):
        s, c = np.sin(x0), np.cos(x0)
        cycle = [s, c, -s, -c] if name == "sin" else [c, -s, -c, s]
        return np.stack([cycle[j % 4] for j in k], axis=-1) / fact
    if name in ("sinh", "cosh"):
        s, c = np.sinh(x0), np.cosh(x0)
        cycle = [s, c] if name == "sinh" else [c, s]
        return np.stack([cycle[j % 2] for j in k], axis=-1) / fact
    if name == "tan":
        if np.any(np.abs(np.cos(x0)) < 1e-14):
            raise DomainError("tan at a pole")
        return _series_div(taylor_coefficients("sin", x0, order), taylor_coefficients("cos", x0, order))
    if name == "tanh":
        return _series_div(taylor_coefficients("sinh", x0, order), taylor_coefficients("cosh", x0, order))
    if name == "abs":
        if np.any(x0 == 0):
            raise DomainError("abs is not differentiable at 0")
        out = np.zeros(x0.shape + (order + 1,))
        out[..., 0] = np.abs(x0)
        if order >= 1:
            out[..., 1] = np.sign(x0)
        return out
    raise DomainError(f"unknown function {name!r}")


@functools.lru_cache(maxsize=None)
def space(nvars: int, order: int) -> JetSpace:
    return JetSpace(nvars, order)


class Jet:
    """Scalar-like wrapper so expression evaluation can treat jets like numbers."""

    __slots__ = ("c", "sp")

    def __init__(self, c, sp: JetSpace):
        self.c = c
        self.sp = sp

    def _wrap(self, o):
        if isinstance(o, Jet):
            return o.c
        return self.sp.constant(o)

    def __add__(self, o):
        if isinstance(o, Jet):
            return Jet(self.c + o.c, self.sp)
        c = self.c.copy()
        c[..., 0] += o
        return Jet(c, self.sp)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.c, self.sp)

    def __sub__(self, o):
        return self + (-o)

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        if isinstance(o, Jet):
            return Jet(self.sp.mul(self.c, o.c), self.sp)
        return Jet(self.c * o, self.sp)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Jet):
            if np.any(o.c[..., 0] == 0):
                raise DomainError("division by zero")
            return Jet(self.sp.div(self.c, o.c), self.sp)
        if np.any(np.asarray(o) == 0):
            raise DomainError("division by zero")
        return Jet(self.c / o, self.sp)

    def __rtruediv__(self, o):
        if np.any(self.c[..., 0] == 0):
            raise DomainError("division by zero")
        return Jet(self.sp.power(self.c, -1.0) * o, self.sp)

    def __pow__(self, c):
        if isinstance(c, Jet):
            raise DomainError("exponent must be a constant")
        return Jet(self.sp.power(self.c, float(c)), self.sp)

    def __abs__(self):
        return Jet(self.sp.apply("abs", self.c), self.sp)

    def _fn(name):
        def f(self):
            return Jet(self.sp.apply(name, self.c), self.sp)

        f.__name__ = name
        return f

    exp = _fn("exp")
    log = _fn("log")
    sqrt = _fn("sqrt")
    sin = _fn("sin")
    cos = _fn("cos")
    tan = _fn("tan")
    sinh = _fn("sinh")
    cosh = _fn("cosh")
    tanh = _fn("tanh")
    del _fn

