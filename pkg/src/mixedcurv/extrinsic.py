"""Configuration tensors of the two distributions and their scalar invariants.

Everything is assembled in the coordinate basis from the projector P onto a
distribution and its complement Q = I − P, which is equivalent to summing
over an adapted frame but never depends on a pointwise frame gauge.  For
the distribution 𝒟̃ the data are h, T, H (𝒟-valued); for 𝒟 they are the
tilded h̃, T̃, H̃ (𝒟̃-valued).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .calculus import Stage
from .chart import Geometry
from .errors import NotCodimOne

WHICH = ("Dtilde", "D")


class DistributionData:
    """Jets of the configuration tensors of one distribution on a Stage.

    Conventions (all arrays carry the batch axis first and the jet axis last):
      h[k, i, j], T[k, i, j]   complement-valued, zero unless i, j lie in the distribution
      H[k]                    mean curvature vector
      A[l, a, b], Tsh[l, a, b] Weingarten operators A_{∂l} and T♯_{∂l} as (1,1) tensors
      casorati, tcasorati, K  the operators 𝓐, 𝓣, 𝓚 as (1,1) tensors [a, b]
      Psi, Phi_h, Phi_T       (0,2) tensors on the complement
      r                       partial Ricci tensor of the complement (frame sum over this distribution)
    """

    def __init__(self, stage: Stage, which: str):
        if which not in WHICH:
            raise ValueError(f"which must be one of {WHICH}")
        self.stage = stage
        self.which = which
        self.P = stage.Pt if which == "Dtilde" else stage.Pp
        self.Q = stage.Pp if which == "Dtilde" else stage.Pt

    @property
    def rank(self) -> int:
        return self.stage.geometry.n if self.which == "Dtilde" else self.stage.geometry.p

    def ein(self, s, a, b):
        return self.stage.ein(s, a, b)

    @cached_property
    def DP(self) -> np.ndarray:
        return self.stage.cov(self.P, "ud")

    @cached_property
    def W(self) -> np.ndarray:
        """W(X, Y) = (∇_{PX} PY)^⊥ restricted, = Q (∇_{PX} P) PY."""
        QDP = self.ein("kc,acd->akd", self.Q, self.DP)
        PQDP = self.ein("ai,akd->kid", self.P, QDP)
        return self.ein("kid,dj->kij", PQDP, self.P)

    @cached_property
    def h(self) -> np.ndarray:
        return 0.5 * (self.W + np.swapaxes(self.W, 2, 3))

    @cached_property
    def T(self) -> np.ndarray:
        return 0.5 * (self.W - np.swapaxes(self.W, 2, 3))

    @cached_property
    def gt(self) -> np.ndarray:
        """Inverse metric of this distribution, Σ ε_a E_a ⊗ E_a."""
        return self.ein("ic,cj->ij", self.P, self.stage.gi)

    @cached_property
    def gQ(self) -> np.ndarray:
        return self.ein("ic,cj->ij", self.Q, self.stage.gi)

    @cached_property
    def H(self) -> np.ndarray:
        return self.ein("kij,ij->k", self.h, self.gt)

    @cached_property
    def hl(self) -> np.ndarray:
        return self.stage.lower_first(self.h)

    @cached_property
    def Tl(self) -> np.ndarray:
        return self.stage.lower_first(self.T)

    @cached_property
    def Hl(self) -> np.ndarray:
        return self.ein("kc,c->k", self.stage.g, self.H)

    @cached_property
    def A(self) -> np.ndarray:
        return self.ein("ac,lbc->lab", self.gt, self.hl)

    @cached_property
    def Tsh(self) -> np.ndarray:
        return self.ein("ac,lbc->lab", self.gt, self.Tl)

    def _frame_square(self, X, Y) -> np.ndarray:
        """Σ_i ε_i X_i Y_i over a frame of the complement, as a (1,1) tensor."""
        XY = self.ein("lac,scb->lsab", X, Y)
        return self.ein("ls,lsab->ab", self.gQ, XY)

    @cached_property
    def casorati(self) -> np.ndarray:
        return self._frame_square(self.A, self.A)

    @cached_property
    def tcasorati(self) -> np.ndarray:
        return self._frame_square(self.Tsh, self.Tsh)

    @cached_property
    def K(self) -> np.ndarray:
        return self._frame_square(self.Tsh, self.A) - self._frame_square(self.A, self.Tsh)

    @cached_property
    def AT_sym(self) -> np.ndarray:
        """Σ_i ε_i (A_i T♯_i + T♯_i A_i)."""
        return self._frame_square(self.A, self.Tsh) + self._frame_square(self.Tsh, self.A)

    @cached_property
    def Psi(self) -> np.ndarray:
        AA = self.ein("sac,lca->ls", self.A, self.A)
        TT = self.ein("sac,lca->ls", self.Tsh, self.Tsh)
        return AA + TT

    def _pair_norm(self, Xl) -> np.ndarray:
        """Σ_{a,b} ε_a ε_b X(E_a,E_b)^♭ ⊗ X(E_a,E_b)^♭ as a (0,2) tensor."""
        Xr = self.ein("ac,lcb->lab", self.gt, Xl)
        Xrr = self.ein("bd,lad->lab", self.gt, Xr)
        return self.ein("lab,sab->ls", Xrr, Xl)

    @cached_property
    def Phi_h(self) -> np.ndarray:
        return self.ein("l,s->ls", self.Hl, self.Hl) - self._pair_norm(self.hl)

    @cached_property
    def Phi_T(self) -> np.ndarray:
        return -self._pair_norm(self.Tl)

    # scalars ----------------------------------------------------------

    def trace_g(self, B) -> np.ndarray:
        return self.ein("ij,ij->", self.stage.gi, B)

    @cached_property
    def hh(self) -> np.ndarray:
        return self.trace_g(self._pair_norm(self.hl))

    @cached_property
    def TT(self) -> np.ndarray:
        return self.trace_g(self._pair_norm(self.Tl))

    @cached_property
    def HH(self) -> np.ndarray:
        return self.ein("k,k->", self.H, self.Hl)

    @cached_property
    def S_ex(self) -> np.ndarray:
        return self.HH - self.hh

    @cached_property
    def divH(self) -> np.ndarray:
        return self.stage.div_vector(self.H)

    @cached_property
    def div_h(self) -> np.ndarray:
        return self.stage.div_tensor(self.h)

    @cached_property
    def h_dot_H(self) -> np.ndarray:
        """⟨h, H⟩(X, Y) = g(h(X, Y), H)."""
        return self.ein("kij,k->ij", self.h, self.Hl)

    @cached_property
    def DH(self) -> np.ndarray:
        """g(∇_a H, ∂_k) as [a, k]."""
        return self.ein("ac,ck->ak", self.stage.cov(self.H, "u"), self.stage.g)

    def _on_complement(self, B) -> np.ndarray:
        QB = self.ein("ai,ab->ib", self.Q, B)
        return self.ein("ib,bj->ij", QB, self.Q)

    @cached_property
    def Def_H(self) -> np.ndarray:
        """Def of H restricted to the complement."""
        return self._on_complement(0.5 * (self.DH + np.swapaxes(self.DH, 1, 2)))

    @cached_property
    def d_H(self) -> np.ndarray:
        return self._on_complement(0.5 * (self.DH - np.swapaxes(self.DH, 1, 2)))

    @cached_property
    def r(self) -> np.ndarray:
        """Partial Ricci tensor of the complement: Σ_a ε_a g(R(E_a, X^c)E_a, Y^c)."""
        Rl = self.stage.riemann_lower
        r = self.ein("ac,axcy->xy", self.gt, Rl)
        return self._on_complement(r)

    def flat(self, S) -> np.ndarray:
        """(1,1) operator S to the (0,2) tensor (X, Y) ↦ g(S X, Y)."""
        return self.ein("ab,ac->bc", S, self.stage.g)


class PairData:
    """Both distributions on one Stage, with the mixed quantities that combine them."""

    def __init__(self, stage: Stage):
        self.stage = stage
        self.dt = DistributionData(stage, "Dtilde")
        self.d = DistributionData(stage, "D")

    def ip(self, A, B) -> np.ndarray:
        """⟨A, B⟩ = Tr_g(A♯ B♯) for (0,2) tensors."""
        gi = self.stage.gi
        Ar = self.stage.ein("ia,ab->ib", gi, A)
        Arr = self.stage.ein("ib,jb->ij", Ar, gi)
        return self.stage.ein("ij,ij->", Arr, B)

    @cached_property
    def S_mix(self) -> np.ndarray:
        return self.dt.trace_g(self.dt.r)

    def genric_terms(self, which: str = "D") -> dict:
        """Right-hand terms of the partial Ricci identity for 𝒟 (or its dual for 𝒟̃).

        r_𝒟 = div h̃ + ⟨h̃, H̃⟩ − 𝓐̃♭ − 𝓣̃♭ − Ψ + Def_𝒟 H, evaluated on 𝒟 × 𝒟.
        """
        own, other = (self.dt, self.d) if which == "D" else (self.d, self.dt)
        proj = own._on_complement
        return {
            "div_h": proj(other.div_h),
            "h_dot_H": proj(other.h_dot_H),
            "casorati": -proj(other.flat(other.casorati)),
            "tcasorati": -proj(other.flat(other.tcasorati)),
            "Psi": -proj(own.Psi),
            "Def_H": own.Def_H,
        }

    def genric_residual(self, which: str = "D"):
        own = self.dt if which == "D" else self.d
        terms = self.genric_terms(which)
        rhs = sum(terms.values())
        return own.r, rhs, terms

    def dH_terms(self, which: str = "D") -> dict:
        """Terms of d_𝒟 H = −diṽ T̃ + Σ_a ε_a (Ã_a T̃♯_a + T̃♯_a Ã_a)^♭ on 𝒟 × 𝒟."""
        own, other = (self.dt, self.d) if which == "D" else (self.d, self.dt)
        proj = own._on_complement
        return {
            "div_T": -proj(self.stage.partial_div_tensor(other.T, own.P)),
            "AT": proj(other.flat(other.AT_sym)),
        }


# point-wise API ------------------------------------------------------


@dataclass(frozen=True)
class ExtrinsicData:
    which: str
    h: np.ndarray
    T: np.ndarray
    H: np.ndarray
    A: np.ndarray
    Tsh: np.ndarray
    metric: np.ndarray

    def weingarten(self, Z) -> np.ndarray:
        """A_Z as a matrix acting on column vectors."""
        return np.einsum("l,lab->ab", np.asarray(Z, dtype=float), self.A)

    def tsharp(self, Z) -> np.ndarray:
        return np.einsum("l,lab->ab", np.asarray(Z, dtype=float), self.Tsh)


@dataclass(frozen=True)
class DerivedOperators:
    which: str
    casorati: np.ndarray
    tcasorati: np.ndarray
    K: np.ndarray
    Psi: np.ndarray
    Phi_h: np.ndarray
    Phi_T: np.ndarray
    Def_H: np.ndarray
    d_H: np.ndarray
    r: np.ndarray


@dataclass(frozen=True)
class ScalarInvariants:
    S_mix: float
    S_ex: float
    S_ex_tilde: float
    TT: float
    TT_tilde: float
    hh: float
    hh_tilde: float
    HH: float
    HH_tilde: float
    divH: float
    divH_tilde: float
    Ric_N: float | None = None
    R_N: np.ndarray | None = None


def _pair(geometry: Geometry, x, order: int = 2) -> PairData:
    return PairData(Stage(geometry, np.atleast_2d(np.asarray(x, dtype=float)), order))


def _data(pair: PairData, which: str) -> DistributionData:
    return pair.dt if which == "Dtilde" else pair.d


def configuration_tensors(geometry: Geometry, x, which: str = "Dtilde") -> ExtrinsicData:
    pair = _pair(geometry, x)
    dd = _data(pair, which)
    v = pair.stage.value
    return ExtrinsicData(which, v(dd.h)[0], v(dd.T)[0], v(dd.H)[0], v(dd.A)[0], v(dd.Tsh)[0], v(pair.stage.g)[0])


def derived_operators(geometry: Geometry, x, which: str = "Dtilde") -> DerivedOperators:
    pair = _pair(geometry, x)
    dd = _data(pair, which)
    v = lambda a: pair.stage.value(a)[0]
    return DerivedOperators(
        which, v(dd.casorati), v(dd.tcasorati), v(dd.K), v(dd.Psi), v(dd.Phi_h), v(dd.Phi_T), v(dd.Def_H), v(dd.d_H), v(dd.r)
    )


def partial_ricci(geometry: Geometry, x, which: str = "D") -> np.ndarray:
    """r_𝒟 (which='D') or r_𝒟̃ = r_ℱ (which='Dtilde') in coordinates."""
    pair = _pair(geometry, x)
    own = pair.dt if which == "D" else pair.d
    return pair.stage.value(own.r)[0]


def scalar_invariants(geometry: Geometry, x) -> ScalarInvariants:
    pair = _pair(geometry, x)
    v = lambda a: float(pair.stage.value(a)[0])
    dt, d = pair.dt, pair.d
    ric_n = r_n = None
    if geometry.p == 1 or geometry.n == 1:
        c1 = Codim1Data(pair, swap=geometry.p != 1)
        ric_n = float(c1.value(c1.Ric_N)[0])
        r_n = pair.stage.value(c1.R_N)[0]
    return ScalarInvariants(
        v(pair.S_mix), v(dt.S_ex), v(d.S_ex), v(dt.TT), v(d.TT), v(dt.hh), v(d.hh), v(dt.HH), v(d.HH), v(dt.divH), v(d.divH), ric_n, r_n
    )


# codimension one -----------------------------------------------------


class Codim1Data:
    """Unit normal N spanning a rank-1 distribution, with τ's, h_sc and H̃.

    By default the rank-1 distribution is 𝒟 (p = 1) and the leaves are 𝒟̃.
    With swap=True the roles are exchanged (flows, n = 1) and the results are
    the tilded τ̃'s.
    """

    def __init__(self, pair: PairData, swap: bool = False, normal_axis: int | None = None):
        geo = pair.stage.geometry
        if (geo.n if swap else geo.p) != 1:
            raise NotCodimOne(f"distribution has rank {geo.n if swap else geo.p}, expected 1")
        self.pair = pair
        self.stage = pair.stage
        self.leaf = pair.d if swap else pair.dt  # data of the leaf distribution
        self.line = pair.dt if swap else pair.d  # data of the normal line field
        Q = self.leaf.Q
        if normal_axis is None:
            col = np.linalg.norm(self.stage.value(Q)[0], axis=0)
            normal_axis = int(np.argmax(col))
        self.k = normal_axis
        v = Q[:, :, normal_axis, :]
        nrm = self.stage.ein("i,i->", v, self.stage.ein("ij,j->i", self.stage.g, v))
        self.eps = np.sign(self.stage.value(nrm))
        inv_len = self.stage.sp.power(nrm * self.eps[:, None], -0.5)
        self.N = self.stage.ein("i,->i", v, inv_len)

    def value(self, a):
        return self.stage.value(a)

    def ein(self, s, a, b):
        return self.stage.ein(s, a, b)

    def _eps(self, a):
        return a * self.eps.reshape((-1,) + (1,) * (a.ndim - 1))

    @cached_property
    def Nl(self) -> np.ndarray:
        return self.ein("ij,j->i", self.stage.g, self.N)

    @cached_property
    def A_N(self) -> np.ndarray:
        return self.ein("l,lab->ab", self.N, self.leaf.A)

    @cached_property
    def h_sc(self) -> np.ndarray:
        return self._eps(self.ein("l,lij->ij", self.N, self.leaf.hl))

    def tau(self, i: int) -> np.ndarray:
        M = self.A_N
        out = M
        for _ in range(i - 1):
            out = self.stage.sp.matmul(out, M)
        return np.einsum("...aaz->...z", out)

    @cached_property
    def tau1(self) -> np.ndarray:
        return self.tau(1)

    @cached_property
    def tau2(self) -> np.ndarray:
        return self.tau(2)

    @cached_property
    def H_line(self) -> np.ndarray:
        """Curvature vector of the N-curves, ε_N ∇_N N (equals the line field's mean curvature)."""
        return self.line.H

    @cached_property
    def N_tau1(self) -> np.ndarray:
        return self.ein("a,a->", self.N, np.moveaxis(self.stage.sp.grad(self.tau1), -2, 1))

    @cached_property
    def R_N(self) -> np.ndarray:
        """Jacobi operator R_N = R(N, ·)N as a (1,1) tensor [x, d]."""
        return self.ein("a,axd->xd", self.N, self.ein("axcd,c->axd", self.stage.riemann, self.N))

    @cached_property
    def Ric_N(self) -> np.ndarray:
        """Σ_a ε_a g(R_N(E_a), E_a) over the leaf frame."""
        RNl = self.ein("xd,dy->xy", self.R_N, self.stage.g)
        return self.ein("xy,xy->", self.leaf.gt, RNl)

    @cached_property
    def nabla_N_hsc(self) -> np.ndarray:
        D = self.stage.cov(self.h_sc, "dd")
        return self._on_leaf(self.ein("a,aij->ij", self.N, D))

    def _on_leaf(self, B) -> np.ndarray:
        P = self.leaf.P
        PB = self.ein("ai,ab->ib", P, B)
        return self.ein("ib,bj->ij", PB, P)

    @cached_property
    def div_H_line(self) -> np.ndarray:
        return self.stage.div_vector(self.H_line)

    @cached_property
    def div_N(self) -> np.ndarray:
        return self.stage.div_vector(self.N)

    def sigmas(self) -> np.ndarray:
        """Elementary symmetric functions σ_0..σ_n of the eigenvalues of A_N (values only)."""
        return sigmas_from_taus([self.value(self.tau(i)) for i in range(1, self.leaf.rank + 1)])


def sigmas_from_taus(taus) -> np.ndarray:
    """Newton's identities: k σ_k = Σ_{i=1..k} (−1)^{i−1} σ_{k−i} τ_i."""
    taus = [np.asarray(t, dtype=float) for t in taus]
    sig = [np.ones_like(taus[0]) if taus else np.ones(())]
    for k in range(1, len(taus) + 1):
        acc = sum((-1) ** (i - 1) * sig[k - i] * taus[i - 1] for i in range(1, k + 1))
        sig.append(acc / k)
    return np.stack(sig, axis=-1)


@dataclass(frozen=True)
class Codim1Values:
    N: np.ndarray
    eps_N: float
    h_sc: np.ndarray
    A_N: np.ndarray
    taus: np.ndarray
    sigmas: np.ndarray
    H_line: np.ndarray
    div_H_line: float
    div_N: float
    Ric_N: float
    Q: np.ndarray | None = None
    div_H_line_biregular: float | None = None


def biregular_Q(g: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """Q_i = −g00,i / (2|g00| g_ii) for i > 0 from metric values and first derivatives dg[a, i, j]."""
    n = g.shape[-1]
    return np.array([-dg[i, 0, 0] / (2 * abs(g[0, 0]) * g[i, i]) for i in range(1, n)])


def _check_biregular(g: np.ndarray, tol: float = 1e-12) -> None:
    from .errors import NotBiregular

    off = g - np.diag(np.diag(g))
    if np.max(np.abs(off)) > tol:
        raise NotBiregular("metric has off-diagonal terms in biregular coordinates")


def codim1_data(geometry: Geometry, x, swap: bool = False) -> Codim1Values:
    """h_sc, A_N, τ₁..τ_n, σ's, H̃ and div H̃ at x; with swap the roles of the distributions flip."""
    pair = PairData(Stage(geometry, np.atleast_2d(np.asarray(x, dtype=float)), 3))
    c1 = Codim1Data(pair, swap=swap)
    v = lambda a: pair.stage.value(a)[0]
    rank = c1.leaf.rank
    taus = np.array([float(v(c1.tau(i))) for i in range(1, max(rank, 4) + 1)])
    sig = sigmas_from_taus(taus[:rank])
    Qi = div_bireg = None
    g0 = v(pair.stage.g)
    if not swap and c1.k == 0 and np.max(np.abs(g0 - np.diag(np.diag(g0)))) <= 1e-12:
        Qi, div_bireg = _divNN_biregular(pair)
    return Codim1Values(
        v(c1.N), float(c1.eps[0]), v(c1.h_sc), v(c1.A_N), taus, sig, v(c1.H_line), float(v(c1.div_H_line)),
        float(v(c1.div_N)), float(v(c1.Ric_N)), Qi, div_bireg,
    )


def _divNN_biregular(pair: PairData):
    """div H̃ in orthogonal biregular coordinates.

    Q_i = −g00,i/(2|g00| g_ii) are the components of ∇_N N, H̃ = ε_N ∇_N N, and
    div H̃ = ε_N Σ_i [∂_i Q_i + ½ Q_i ∂_i log|det g|].
    """
    st = pair.stage
    sp = st.sp
    g = st.g
    m = st.m
    g00 = g[:, 0, 0]
    eps_N = np.sign(g00[:, 0])
    absg00 = g00 * eps_N[:, None]
    Qs = [-0.5 * sp.div(sp.deriv(g00, i), sp.mul(absg00, g[:, i, i])) for i in range(1, m)]
    total = np.zeros_like(g00)
    for idx, i in enumerate(range(1, m)):
        logdet = sum(sp.div(sp.deriv(g[:, j, j], i), g[:, j, j]) for j in range(m))
        total = total + sp.deriv(Qs[idx], i) + 0.5 * sp.mul(Qs[idx], logdet)
    return np.array([float(q[0, 0]) for q in Qs]), float(eps_N[0] * total[0, 0])
