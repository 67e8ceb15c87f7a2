"""Levi-Civita calculus on a chart, batched over points with Taylor jets.

Curvature follows R(X,Y) = ∇_Y∇_X − ∇_X∇_Y + ∇_[X,Y], the negative of the
more common convention, so that K(X,Y) = g(R(X,Y)X, Y)/W(X,Y) is the
sectional curvature (unit sphere: K = 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import exprlang
from .chart import Geometry
from .errors import DegeneratePlane, DegenerateDistribution
from .jets import Jet, space

PLANE_THRESHOLD = 1e-12
_SLOTS = "bcdefghijk"


class Stage:
    """Metric, projectors, connection and curvature as jets on a batch of points.

    points has shape (N, m).  `metric` may replace the geometry's metric jets
    (used for perturbed metrics g + tB); the splitting always comes from the
    geometry.  Quantities needing k derivatives of g are exact when
    k <= order.
    """

    def __init__(self, geometry: Geometry, points, order: int = 2, metric=None):
        self.geometry = geometry
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.m = geometry.dim
        self.order = order
        self.sp = space(self.m, order)
        self.X = self.sp.variables(self.points)
        self.g = geometry.metric_jets(self.sp, self.X) if metric is None else metric
        self.gi = self.sp.inv_matrix(self.g)
        self.V = geometry.frame_jets(self.sp, self.X)

    # scalar helpers ---------------------------------------------------

    def ein(self, subscripts, a, b):
        return self.sp.einsum(subscripts, a, b)

    def scalar(self, e) -> np.ndarray:
        """Jets of a scalar Expr (or source string) on this stage."""
        e = exprlang.as_expr(e)
        coords = [Jet(self.X[:, v, :], self.sp) for v in range(self.m)]
        val = exprlang.evaluate(e, coords, self.geometry.params)
        if isinstance(val, Jet):
            return val.c
        return self.sp.constant(val, (len(self.points),))

    def value(self, a) -> np.ndarray:
        return np.asarray(a)[..., 0]

    # projectors -------------------------------------------------------

    @cached_property
    def Pt(self) -> np.ndarray:
        """Projector onto 𝒟̃ along 𝒟, as (1,1) jets P[i, j]."""
        V = self.V
        G = self.ein("ai,ij->aj", V, self.g)
        gram = self.ein("aj,bj->ab", G, V)
        if np.any(np.linalg.cond(gram[..., 0]) > 1e12):
            raise DegenerateDistribution("metric restricted to the distribution is degenerate")
        gram_inv = self.sp.inv_matrix(gram)
        return self.ein("ai,aj->ij", V, self.ein("ab,bj->aj", gram_inv, G))

    @cached_property
    def Pp(self) -> np.ndarray:
        eye = self.sp.constant(np.eye(self.m), (len(self.points), self.m, self.m))
        Pp = eye - self.Pt
        gram = self.ein("ij,ik->jk", Pp, self.ein("ij,jk->ik", self.g, Pp))
        # Pᵀ g P has rank p; its nonzero eigenvalues must stay away from zero
        ev = np.sort(np.abs(np.linalg.eigvalsh(gram[..., 0])), axis=-1)[:, self.m - self.geometry.p :]
        if np.any(ev[:, 0] < 1e-12 * np.maximum(1.0, ev[:, -1])):
            raise DegenerateDistribution("metric restricted to the complement is degenerate")
        return Pp

    def projector(self, which: str) -> np.ndarray:
        return self.Pt if which == "tilde" else self.Pp

    # connection and curvature ------------------------------------------

    @cached_property
    def dg(self) -> np.ndarray:
        """dg[a, i, j] = ∂_a g_ij."""
        return np.moveaxis(self.sp.grad(self.g), -2, 1)

    @cached_property
    def gamma(self) -> np.ndarray:
        """gamma[k, i, j] = Γ^k_ij = ½ g^kl (∂_i g_jl + ∂_j g_il − ∂_l g_ij)."""
        dg = self.dg
        s = np.einsum("...ijlz->...lijz", dg) + np.einsum("...jilz->...lijz", dg) - dg
        return 0.5 * self.ein("kl,lij->kij", self.gi, s)

    @cached_property
    def _curvature_space(self):
        """Curvature needs two derivatives of g, so only degrees ≤ order − 2 are exact."""
        return space(self.m, max(self.order - 2, 0))

    @cached_property
    def _riemann_low(self) -> np.ndarray:
        low = self._curvature_space
        mid = space(self.m, low.order + 1)
        G = self.gamma[..., : mid.ncoef]
        dG = mid.grad(G)[..., : low.ncoef]  # dG[d, b, c, a] = ∂_a Γ^d_bc
        G = G[..., : low.ncoef]
        t1 = np.einsum("...dbcaz->...abcdz", dG)
        GG = low.einsum("dae,ebc->abcd", G, G)
        return -(t1 - np.einsum("...bacdz->...abcdz", t1) + GG - np.einsum("...bacdz->...abcdz", GG))

    @cached_property
    def riemann(self) -> np.ndarray:
        """Rp[a, b, c, d]: R(∂_a, ∂_b)∂_c = Rp[a,b,c,d] ∂_d (library convention).

        Coefficients above degree order − 2 are zero rather than truncated garbage.
        """
        return self.sp.pad(self._riemann_low)

    @cached_property
    def riemann_lower(self) -> np.ndarray:
        """Rlow[a, b, c, e] = g(R(∂_a, ∂_b)∂_c, ∂_e)."""
        low = self._curvature_space
        g = self.g[..., : low.ncoef]
        return self.sp.pad(low.einsum("abcd,de->abce", self._riemann_low, g))

    @cached_property
    def ricci(self) -> np.ndarray:
        """Ric(Y, Z) = Tr(X ↦ R(Y, X)Z); positive on the round sphere."""
        return np.einsum("...yazaw->...yzw", self.riemann)

    # covariant derivative ----------------------------------------------

    def cov(self, T, variance: str) -> np.ndarray:
        """∇T with the derivative slot first: out[a, *slots]."""
        r = len(variance)
        slots = _SLOTS[:r]
        out = np.moveaxis(self.sp.grad(T), -2, 1)
        G = self.gamma
        for s, kind in enumerate(variance):
            src = slots[:s] + "z" + slots[s + 1 :]
            if kind == "u":
                out = out + self.ein(f"{slots[s]}az,{src}->a{slots}", G, T)
            else:
                out = out - self.ein(f"za{slots[s]},{src}->a{slots}", G, T)
        return out

    def lower_first(self, T) -> np.ndarray:
        slots = _SLOTS[: T.ndim - 2]
        return self.ein(f"zk,k{slots[1:]}->z{slots[1:]}", self.g, T)

    def raise_first(self, T) -> np.ndarray:
        slots = _SLOTS[: T.ndim - 2]
        return self.ein(f"zk,k{slots[1:]}->z{slots[1:]}", self.gi, T)

    def div_vector(self, X) -> np.ndarray:
        return np.einsum("...aaz->...z", self.cov(X, "u"))

    def div_tensor(self, T) -> np.ndarray:
        """(div T)(X, Y) = Σ ∇_a T^a(X, Y) for a (1,2) tensor T^k_ij."""
        return np.einsum("...aaijz->...ijz", self.cov(T, "udd"))

    def partial_div_tensor(self, T, P) -> np.ndarray:
        """Σ_a ε_a g((∇_{E_a} T)(X, Y), E_a) over a frame of the distribution with projector P."""
        return self.ein("ac,acij->ij", P, self.cov(T, "udd"))

    def partial_div_vector(self, X, P) -> np.ndarray:
        return self.ein("ac,ac->", P, self.cov(X, "u"))

    def gradient(self, f) -> np.ndarray:
        return self.ein("ij,j->i", self.gi, np.moveaxis(self.sp.grad(f), -2, 1))

    def laplacian(self, f) -> np.ndarray:
        return self.div_vector(self.gradient(f))



# point-wise operations -------------------------------------------------


@dataclass(frozen=True)
class TensorValue:
    """Components in the coordinate basis with variance 'u'/'d' per slot."""

    components: np.ndarray
    variance: str
    basis: str = "coordinate"

    def lower(self, g: np.ndarray, slot: int = 0) -> "TensorValue":
        return self._move(g, slot, "u", "d")

    def raise_(self, g: np.ndarray, slot: int = 0) -> "TensorValue":
        return self._move(np.linalg.inv(g), slot, "d", "u")

    def _move(self, mat, slot, have, want):
        if self.variance[slot] != have:
            raise ValueError(f"slot {slot} is not {'contravariant' if have == 'u' else 'covariant'}")
        comp = np.moveaxis(np.tensordot(mat, self.components, axes=([1], [slot])), 0, slot)
        return TensorValue(comp, self.variance[:slot] + want + self.variance[slot + 1 :], self.basis)


def _stage(geometry, x, order=2) -> Stage:
    return Stage(geometry, np.atleast_2d(np.asarray(x, dtype=float)), order)


def _field_jets(stage: Stage, field) -> np.ndarray:
    arr = np.asarray(field, dtype=object)
    flat = [stage.scalar(e) for e in arr.ravel()]
    out = np.stack(flat, axis=1).reshape((len(stage.points),) + arr.shape + (stage.sp.ncoef,))
    return out


def christoffel(geometry: Geometry, x) -> np.ndarray:
    """Γ^k_ij at x as an array [k, i, j]."""
    return _stage(geometry, x).value(_stage(geometry, x).gamma)[0]


def riemann(geometry: Geometry, x) -> np.ndarray:
    """R[a, b, c, d] with R(∂_a, ∂_b)∂_c = R[a, b, c, d]∂_d."""
    st = _stage(geometry, x)
    return st.value(st.riemann)[0]


def sectional_curvature(geometry: Geometry, x, X, Y) -> float:
    st = _stage(geometry, x)
    g = st.value(st.g)[0]
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    W = (X @ g @ X) * (Y @ g @ Y) - (X @ g @ Y) ** 2
    if abs(W) <= PLANE_THRESHOLD:
        raise DegeneratePlane(f"|W(X, Y)| = {abs(W):.3e}")
    Rl = st.value(st.riemann_lower)[0]
    return float(np.einsum("abce,a,b,c,e->", Rl, X, Y, X, Y) / W)


def covariant_derivative(geometry: Geometry, field, variance: str, x) -> TensorValue:
    """∇ of a tensor field given by Expr components; the new covariant slot comes first."""
    st = _stage(geometry, x)
    T = _field_jets(st, field)
    return TensorValue(st.value(st.cov(T, variance))[0], "d" + variance)


def lie_bracket(geometry: Geometry, X, Y, x) -> np.ndarray:
    st = _stage(geometry, x)
    Xj, Yj = _field_jets(st, X), _field_jets(st, Y)
    dX = np.moveaxis(st.sp.grad(Xj), -2, 1)
    dY = np.moveaxis(st.sp.grad(Yj), -2, 1)
    br = st.ein("a,ak->k", Xj, dY) - st.ein("a,ak->k", Yj, dX)
    return st.value(br)[0]


def divergences(geometry: Geometry, x, field) -> dict:
    """div, div⊥ (along 𝒟) and diṽ (along 𝒟̃) of a vector or (1,2)-tensor field."""
    st = _stage(geometry, x)
    T = _field_jets(st, field)
    if T.ndim == 3:
        parts = (st.div_vector(T), st.partial_div_vector(T, st.Pp), st.partial_div_vector(T, st.Pt))
    else:
        parts = (st.div_tensor(T), st.partial_div_tensor(T, st.Pp), st.partial_div_tensor(T, st.Pt))
    div, perp, tilde = (st.value(v)[0] for v in parts)
    return {"div": div, "div_perp": perp, "div_tilde": tilde}


def scalar_operators(geometry: Geometry, x, f) -> dict:
    """∇f, Δf, the 𝒟̃-Laplacian Δ̃f = diṽ(∇̃f), and the projections ∇⊤f, ∇⊥f."""
    st = _stage(geometry, x)
    fj = st.scalar(f)
    grad = st.gradient(fj)
    top = st.ein("ij,j->i", st.Pt, grad)
    perp = st.ein("ij,j->i", st.Pp, grad)
    out = {
        "grad": grad,
        "laplacian": st.laplacian(fj),
        "tilde_laplacian": st.partial_div_vector(top, st.Pt),
        "grad_top": top,
        "grad_perp": perp,
    }
    return {k: st.value(v)[0] for k, v in out.items()}
