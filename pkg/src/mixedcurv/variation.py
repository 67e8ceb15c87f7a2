"""Adapted variations of the metric, action quadrature and Euler–Lagrange residuals.

A variation is g_t = g + tB with B adapted (supported on one block of the
splitting) and compactly supported in the working box Ω.  The volume-
normalized flavor rescales the varied block by φ_t so that Vol(Ω) is
constant.

Two bumps are available.  The default "poly" bump Π(1 − u_a²)^4 vanishes with
three derivatives on ∂Ω, which is all the variation formulas need, and is
entire, so plain Gauss–Legendre integrates bump-weighted integrands to near
machine precision with few nodes.  The "exp" bump Π exp(1 − 1/(1 − u_a²)) is
C^∞ but needs a tanh-mapped rule and many more nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import exprlang
from .calculus import Stage
from .chart import Geometry
from .errors import ConfigError, HypothesisViolated, QuadratureNotConverged
from .extrinsic import Codim1Data, PairData
from .sampling import map_pairs, residual, sample_points

BUMP_SPAN = 2.6
POLY_POWER = 4
BUMPS = ("poly", "exp")
FD_STEP = 1e-3
KINDS = ("D", "Dtilde")
ACTIONS = ("mix", "ex")


# quadrature ---------------------------------------------------------------


def _bump_rule(n: int):
    """Nodes u = tanh s and weights on (−1, 1) for integrands vanishing to all orders at ±1."""
    s, w = np.polynomial.legendre.leggauss(n)
    s, w = BUMP_SPAN * s, BUMP_SPAN * w
    return np.tanh(s), w / np.cosh(s) ** 2


@dataclass(frozen=True)
class Domain:
    """A box Ω strictly inside the chart box, with its two quadrature rules."""

    box: tuple
    quad: int = 12
    bump_quad: int = 12
    bump: str = "poly"

    @property
    def lo(self) -> np.ndarray:
        return np.array([b[0] for b in self.box], dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.array([b[1] for b in self.box], dtype=float)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def half(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    def grid(self, rule: str = "plain", quad: int | None = None):
        """Tensor-product nodes (N, m) and positive weights (N,)."""
        if rule == "plain":
            u, w = np.polynomial.legendre.leggauss(quad or self.quad)
        elif self.bump == "poly":
            u, w = np.polynomial.legendre.leggauss(quad or self.bump_quad)
        else:
            u, w = _bump_rule(quad or self.bump_quad)
        m = len(self.box)
        axes = [self.center[a] + self.half[a] * u for a in range(m)]
        wax = [self.half[a] * w for a in range(m)]
        pts = np.stack([x.ravel() for x in np.meshgrid(*axes, indexing="ij")], axis=1)
        wts = np.ones(len(pts))
        for x in np.meshgrid(*wax, indexing="ij"):
            wts = wts * x.ravel()
        return pts, wts

    def bump_values(self, points) -> np.ndarray:
        u = (np.atleast_2d(points) - self.center) / self.half
        inside = np.all(np.abs(u) < 1, axis=1)
        out = np.zeros(len(u))
        uu = u[inside]
        if self.bump == "poly":
            out[inside] = np.prod((1.0 - uu**2) ** POLY_POWER, axis=1)
        else:
            out[inside] = np.exp(np.sum(1.0 - 1.0 / (1.0 - uu**2), axis=1))
        return out

    def bump_jets(self, sp, X) -> np.ndarray:
        """The bump as jets on points X; zero outside Ω."""
        u = (X[..., 0] - self.center) / self.half
        inside = np.all(np.abs(u) < 1, axis=-1)
        out = np.zeros(X.shape[:-2] + (sp.ncoef,))
        if not np.any(inside):
            return out
        Xi = X[inside]
        k = len(Xi)
        one = sp.constant(1.0, (k,))
        acc = one if self.bump == "poly" else np.zeros((k, sp.ncoef))
        for a in range(len(self.box)):
            ua = (Xi[:, a, :] - sp.constant(self.center[a], (k,))) / self.half[a]
            q = one - sp.mul(ua, ua)
            if self.bump == "poly":
                for _ in range(POLY_POWER):
                    acc = sp.mul(acc, q)
            else:
                acc = acc + one - sp.power(q, -1.0)
        out[inside] = acc if self.bump == "poly" else sp.apply("exp", acc)
        return out


def make_domain(geometry: Geometry, box=None, quad: int = 12, bump_quad: int = 12, margin: float = 0.1, bump: str = "poly") -> Domain:
    """Ω = `box` (default: the chart box shrunk by `margin` on each side); must lie strictly inside the chart."""
    box = geometry.interior_box(margin) if box is None else np.asarray(box, dtype=float)
    lo, hi = geometry.chart.lower, geometry.chart.upper
    if box.shape != (geometry.dim, 2) or np.any(box[:, 0] >= box[:, 1]):
        raise ConfigError("/domain", "domain must give one increasing [lo, hi] pair per coordinate")
    if np.any(box[:, 0] <= lo) or np.any(box[:, 1] >= hi):
        raise ConfigError("/domain", "domain must lie strictly inside the chart box")
    if quad < 1 or bump_quad < 1:
        raise ConfigError("/quad_points", "quadrature needs at least one point per axis")
    if bump not in BUMPS:
        raise ConfigError("/bump", f"bump must be one of {BUMPS}")
    return Domain(tuple(map(tuple, box.tolist())), quad, bump_quad, bump)


def dvol(stage: Stage) -> np.ndarray:
    return np.sqrt(np.abs(np.linalg.det(stage.value(stage.g))))


def integrate(geometry: Geometry, points, weights, integrand, order: int = 2, metric_fn=None) -> float:
    """Σ w · integrand(pair) · dvol, with integrand returning jets or values per point."""

    def fn(pair):
        v = np.asarray(integrand(pair))
        v = v[..., 0] if v.ndim == 2 else v
        return v * dvol(pair.stage)

    return float(np.dot(weights, map_pairs(geometry, points, fn, order, metric_fn)))


def _action_integrand(which: str):
    if which == "mix":
        return lambda pair: pair.S_mix
    if which == "ex":
        return lambda pair: pair.d.S_ex
    raise ConfigError("/action", f"unknown action {which!r}; expected one of {ACTIONS}")


def _action_order(which: str) -> int:
    return 2 if which == "mix" else 1


@dataclass(frozen=True)
class ActionValue:
    value: float
    refined: float
    rel_change: float
    converged: bool

    def to_json(self) -> dict:
        return {"value": self.value, "refined": self.refined, "rel_change": self.rel_change, "converged": self.converged}


def action_value(geometry: Geometry, domain: Domain, which: str = "mix", tol: float = 1e-6, quad: int | None = None, strict: bool = False) -> ActionValue:
    """J over Ω by Gauss–Legendre, with a doubling test on the points per axis.

    Non-convergence is flagged in the result; with strict=True it raises
    QuadratureNotConverged instead.
    """
    f = _action_integrand(which)
    n = quad or domain.quad
    vals = []
    for k in (n, 2 * n):
        pts, w = domain.grid("plain", k)
        vals.append(integrate(geometry, pts, w, f, _action_order(which)))
    rel = abs(vals[1] - vals[0]) / max(1.0, abs(vals[1]))
    res = ActionValue(vals[0], vals[1], rel, rel < tol)
    if strict and not res.converged:
        raise QuadratureNotConverged(f"doubling changed J by {rel:.2e}")
    return res


def volume(geometry: Geometry, domain: Domain) -> float:
    pts, w = domain.grid("plain")
    return integrate(geometry, pts, w, lambda pair: np.ones(len(pair.stage.points)), order=0)


def mean_value(geometry: Geometry, domain: Domain, fn, order: int = 2) -> float:
    """f(Ω, g) = Vol⁻¹ ∫_Ω f dvol."""
    pts, w = domain.grid("plain")
    return integrate(geometry, pts, w, fn, order) / integrate(geometry, pts, w, lambda pair: np.ones(len(pair.stage.points)), order=0)


# finite differences -------------------------------------------------------


def _combine(values, coef):
    if isinstance(values[0], dict):
        return {k: _combine([v[k] for v in values], coef) for k in values[0]}
    return sum(c * np.asarray(v, dtype=float) for c, v in zip(coef, values))


def fd_derivative(f, step: float = FD_STEP, levels: int = 1):
    """Central difference of f at t = 0 with `levels` Richardson extrapolations.

    f may return floats, arrays or dicts of arrays.
    """
    table = []
    for k in range(levels + 1):
        h = step / 2**k
        fp, fm = f(h), f(-h)
        table.append(_combine([fp, fm], [0.5 / h, -0.5 / h]))
    for lev in range(1, levels + 1):
        fac = 4.0**lev
        table = [_combine([table[i + 1], table[i]], [fac / (fac - 1), -1 / (fac - 1)]) for i in range(len(table) - 1)]
    return table[0]


# variation families -------------------------------------------------------


@dataclass
class VariationFamily:
    """B = bump · profile on one block of the splitting, and the metrics g_t or ḡ_t.

    kind "D" varies the 𝒟-block (g⊥-variations), "Dtilde" the 𝒟̃-block.
    `profile` is an m×m symmetric matrix of Exprs (projected onto the block)
    or None; `scalar` s gives the conformal tensor B = s·bump·g⊥ (or s·g̃).
    """

    geometry: Geometry
    domain: Domain
    kind: str = "D"
    profile: tuple | None = None
    scalar: exprlang.Expr | None = None
    normalized: bool = False
    _phi: dict = field(default_factory=dict, repr=False)
    _base: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError("/family/kind", f"kind must be one of {KINDS}")
        if (self.profile is None) == (self.scalar is None):
            raise ConfigError("/family", "give exactly one of profile and scalar")
        if self.profile is not None:
            m = self.geometry.dim
            prof = tuple(tuple(exprlang.as_expr(e) for e in row) for row in self.profile)
            if len(prof) != m or any(len(r) != m for r in prof):
                raise ConfigError("/family/profile", f"profile must be {m}×{m}")
            self.profile = prof
        else:
            self.scalar = exprlang.as_expr(self.scalar)

    @property
    def rank(self) -> int:
        return self.geometry.p if self.kind == "D" else self.geometry.n

    def block_projector(self, stage: Stage) -> np.ndarray:
        return stage.Pp if self.kind == "D" else stage.Pt

    def block_metric(self, stage: Stage) -> np.ndarray:
        P = self.block_projector(stage)
        return stage.ein("ji,jk->ik", P, stage.ein("ij,jk->ik", stage.g, P))

    def B(self, stage: Stage) -> np.ndarray:
        """Jets of B (0,2) on the stage's points, computed from the stage's own metric."""
        bump = self.domain.bump_jets(stage.sp, stage.X)
        P = self.block_projector(stage)
        if self.scalar is not None:
            core = stage.ein(",ij->ij", stage.scalar(self.scalar), self.block_metric(stage))
        else:
            M = np.stack([np.stack([stage.scalar(e) for e in row], axis=1) for row in self.profile], axis=1)
            M = 0.5 * (M + np.swapaxes(M, 1, 2))
            core = stage.ein("ai,aj->ij", P, stage.ein("ab,bj->aj", M, P))
        return stage.ein(",ij->ij", bump, core)

    def metric_fn(self, t: float, phi: float | None = None):
        """metric_fn for map_pairs giving g_t (plain) or ḡ_t = φ_t(block + tB) + rest."""
        if phi is None:
            phi = self.phi(t) if self.normalized else 1.0

        def fn(base: Stage) -> np.ndarray:
            g = base.g + t * self.B(base)
            if phi == 1.0:
                return g
            blk = self.block_metric(base) + t * self.B(base)
            return g + (phi - 1.0) * blk

        return fn

    def hat_metric_fn(self, t: float):
        """ĝ_t = φ_t·block + rest: the smooth part of ḡ_t away from the support of B."""
        phi = self.phi(t)
        return lambda base: base.g + (phi - 1.0) * self.block_metric(base)

    @cached_property
    def base_volume(self) -> float:
        return volume(self.geometry, self.domain)

    def volume_change(self, t: float, phi: float = 1.0) -> float:
        """∫_Ω (dvol(g_t) − dvol(g)) over the support of B (bump rule)."""
        pts, w = self.domain.grid("bump")
        f = self.metric_fn(t, phi)

        def fn(pair):
            return np.ones(len(pair.stage.points))

        def diff(pair):
            base = pair.stage
            gt = f(base)
            return np.sqrt(np.abs(np.linalg.det(gt[..., 0]))) - dvol(base)

        return float(np.dot(w, map_pairs(self.geometry, pts, diff, order=0)))

    def phi(self, t: float) -> float:
        """φ_t = (Vol(Ω, g_t)/Vol(Ω, g))^(−2/rank)."""
        if t == 0.0:
            return 1.0
        if t not in self._phi:
            ratio = 1.0 + self.volume_change(t) / self.base_volume
            self._phi[t] = ratio ** (-2.0 / self.rank)
        return self._phi[t]

    def normalized_volume(self, t: float) -> float:
        """Vol(Ω, ḡ_t) split as Vol(ĝ_t) (closed form in φ) + the compactly supported remainder."""
        phi = self.phi(t) if self.normalized else 1.0
        smooth = self.base_volume * phi ** (self.rank / 2.0)
        pts, w = self.domain.grid("bump")
        full, hat = self.metric_fn(t, phi), (lambda base: base.g + (phi - 1.0) * self.block_metric(base))

        def diff(pair):
            base = pair.stage
            a, b = full(base)[..., 0], hat(base)[..., 0]
            return np.sqrt(np.abs(np.linalg.det(a))) - np.sqrt(np.abs(np.linalg.det(b)))

        return smooth + float(np.dot(w, map_pairs(self.geometry, pts, diff, order=0)))

    def trace_integral(self) -> float:
        """∫_Ω Tr_g B dvol."""
        pts, w = self.domain.grid("bump")
        return integrate(self.geometry, pts, w, lambda pair: pair.dt.trace_g(self.B(pair.stage)), order=0)

    def trace_mean(self) -> float:
        return self.trace_integral() / self.base_volume


def volume_normalized_family(family: VariationFamily) -> VariationFamily:
    return VariationFamily(family.geometry, family.domain, family.kind, family.profile, family.scalar, normalized=True)


def random_family(geometry: Geometry, domain: Domain, seed: int = 0, kind: str = "D", normalized: bool = False) -> VariationFamily:
    """A symmetric profile with random affine-plus-quadratic entries (seeded)."""
    rng = np.random.default_rng(seed)
    m = geometry.dim
    c = [repr(float(x)) for x in domain.center]
    num = lambda lo, hi: repr(float(rng.uniform(lo, hi)))
    rows = [["0"] * m for _ in range(m)]
    for i in range(m):
        for j in range(i, m):
            a0 = num(0.5, 1.5) if i == j else num(-0.5, 0.5)
            lin = " + ".join(f"({num(-0.5, 0.5)})*(x{k} - ({c[k]}))" for k in range(m))
            e = f"{a0} + {lin} + ({num(-0.3, 0.3)})*(x{i} - ({c[i]}))*(x{j} - ({c[j]}))"
            rows[i][j] = rows[j][i] = e
    return VariationFamily(geometry, domain, kind, tuple(map(tuple, rows)), normalized=normalized)


# roles -----------------------------------------------------------------


def _roles(pair: PairData, kind: str):
    """(pri, sec): pri is the distribution whose complement is varied."""
    return (pair.dt, pair.d) if kind == "D" else (pair.d, pair.dt)


def _raise2(stage, B):
    gi = stage.gi
    return stage.ein("ib,jb->ij", stage.ein("ia,ab->ib", gi, B), gi)


def _sharp(stage, B):
    return stage.ein("ia,aj->ij", stage.gi, B)


def _block_metric(stage, Q):
    return stage.ein("ji,jk->ik", Q, stage.ein("ij,jk->ik", stage.g, Q))


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, 1, 2))


# S* mean-value terms -------------------------------------------------------


def sstar_integrand(pair: PairData, kind: str = "D"):
    """S*_mix (kind D) or its dual (kind Dtilde), pointwise.

    S* = S_mix − (2/p)(S_ex + 2⟨T̃,T̃⟩ − ⟨T,T⟩ + div H) and the dual with the
    roles of the distributions exchanged.
    """
    pri, sec = _roles(pair, kind)
    rank = pair.stage.geometry.p if kind == "D" else pair.stage.geometry.n
    return pair.S_mix - (2.0 / rank) * (pri.S_ex + 2 * sec.TT - pri.TT + pri.divH)


def sstar_ex_integrand(pair: PairData, kind: str = "D"):
    return pair.d.S_ex


class SStarCache:
    """Write-once cache of S*(Ω, g) per (geometry, Ω, system kind)."""

    def __init__(self):
        self._store = {}

    def get(self, geometry: Geometry, domain: Domain, key: str, fn, order: int = 2) -> float:
        k = (id(geometry), domain, key)
        if k not in self._store:
            self._store[k] = mean_value(geometry, domain, fn, order)
        return self._store[k]


SSTAR = SStarCache()


def sstar_value(geometry: Geometry, domain: Domain, key: str) -> float:
    """Ω-mean of the S* integrand named by key ∈ {mix-D, mix-Dtilde, ex}."""
    if key == "ex":
        return SSTAR.get(geometry, domain, key, lambda pair: pair.d.S_ex, order=1)
    kind = key.split("-", 1)[1]
    return SSTAR.get(geometry, domain, key, lambda pair: sstar_integrand(pair, kind), order=2)


# first variation ----------------------------------------------------------


def _variation_quantities(family: VariationFamily):
    """Scalars and vectors whose t-derivatives the lemmas predict, at points of a stage."""

    def fn(pair):
        st = pair.stage
        pri, sec = _roles(pair, family.kind)
        v = st.value
        return {
            "S_ex": v(pri.S_ex),
            "TT_sec": v(sec.TT),
            "TT_pri": v(pri.TT),
            "S_ex_sec": v(sec.S_ex),
            "H_pri": v(pri.H),
            "H_sec": v(sec.H),
            "dvol": dvol(st),
        }

    return fn


def _variation_closed_forms(family: VariationFamily):
    def fn(pair):
        st = pair.stage
        v = st.value
        pri, sec = _roles(pair, family.kind)
        B = family.B(st)
        Bsh = _sharp(st, B)
        Bup = _raise2(st, B)
        trB = st.ein("ij,ij->", st.gi, B)
        proj = pri._on_complement
        inner = proj(sec.divH[:, None, None, :] * _block_metric(st, pri.Q) - sec.div_h - _sym(sec.flat(sec.K)))
        flux = st.ein("kij,ij->k", sec.h, Bup) - st.ein(",k->k", trB, sec.H)
        return {
            "S_ex": v(-pair.ip(pri.Phi_h, B)),
            "TT_sec": v(2 * pair.ip(sec.flat(sec.tcasorati), B)),
            "TT_pri": v(-pair.ip(pri.Phi_T, B)),
            "S_ex_sec": v(pair.ip(inner, B) + st.div_vector(flux)),
            "H_pri": v(-st.ein("ij,j->i", Bsh, pri.H)),
            "H_sec": v(-0.5 * st.ein("ij,j->i", pri.P, st.gradient(trB))),
            "dvol": 0.5 * v(trB) * dvol(st),
        }

    return fn


def _integrated_pieces(family: VariationFamily):
    """Integrands of the integrated formulas at t = 0, for the bump grid."""

    def fn(pair):
        st = pair.stage
        v = st.value
        pri, sec = _roles(pair, family.kind)
        B = family.B(st)
        trB = st.ein("ij,ij->", st.gi, B)
        proj = pri._on_complement
        inner = proj(sec.divH[:, None, None, :] * _block_metric(st, pri.Q) - sec.div_h - _sym(sec.flat(sec.K)))
        return {
            "S_ex_sec": v(pair.ip(inner, B) + 0.5 * sec.S_ex * trB[..., :1]) * dvol(st),
        }

    return fn


@dataclass
class CheckResult:
    name: str
    mode: str
    residual: float
    tol: float
    n_points: int = 0
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual < self.tol)

    def to_json(self) -> dict:
        out = {"check": self.name, "mode": self.mode, "n_points": self.n_points, "residual": float(self.residual), "tol": self.tol, "pass": self.passed}
        if self.details:
            out["details"] = {k: (float(x) if isinstance(x, (float, np.floating, int, np.integer)) else x) for k, x in self.details.items()}
        return out


def _scaled(fd, closed) -> float:
    fd, closed = np.asarray(fd, dtype=float), np.asarray(closed, dtype=float)
    n = fd.shape[0] if fd.ndim else 1
    return float(np.max(residual(fd.reshape(n, -1), closed.reshape(n, -1))))


def _density(integrand, pair):
    v = np.asarray(integrand(pair))
    v = v[..., 0] if v.ndim == 2 else v
    return v * dvol(pair.stage)


def _family_points(family: VariationFamily, count: int, seed: int):
    box = np.stack([family.domain.center - 0.8 * family.domain.half, family.domain.center + 0.8 * family.domain.half], axis=1)
    return sample_points(family.geometry, count, seed=seed, box=box)


def first_variation_check(family: VariationFamily, points: int = 32, seed: int = 0, step: float = FD_STEP, levels: int = 1,
                          tol_point: float = 1e-6, tol_int: float = 1e-5) -> list[CheckResult]:
    """FD-in-t of the lemma quantities against their closed forms, pointwise and integrated."""
    if family.normalized:
        raise HypothesisViolated("first-variation formulas need the plain flavor")
    geo = family.geometry
    pts = _family_points(family, points, seed)
    quantities = _variation_quantities(family)
    fd = fd_derivative(lambda t: map_pairs(geo, pts, quantities, 2, family.metric_fn(t, 1.0)), step, levels)
    closed = map_pairs(geo, pts, _variation_closed_forms(family), 2)
    labels = {
        "S_ex": "dt_S_ex", "TT_sec": "dt_TT_complement", "TT_pri": "dt_TT", "S_ex_sec": "dt_S_ex_complement_pointwise",
        "H_pri": "dt_H", "H_sec": "dt_H_complement", "dvol": "dt_dvol",
    }
    out = [CheckResult(labels[k], "point", _scaled(fd[k], closed[k]), tol_point, len(pts)) for k in labels]

    # integrated forms over Ω
    bump_pts, w = family.domain.grid("bump")
    sec_ex = lambda pair: _roles(pair, family.kind)[1].S_ex

    def integral(fn, order):
        return lambda t: float(np.dot(w, map_pairs(geo, bump_pts, lambda pair: _density(fn, pair), order, family.metric_fn(t, 1.0))))

    lhs = fd_derivative(integral(sec_ex, 1), step, levels)
    rhs = float(np.dot(w, map_pairs(geo, bump_pts, _integrated_pieces(family), 2)["S_ex_sec"]))
    out.append(CheckResult("dt_int_S_ex_complement", "integrated", abs(lhs - rhs) / (1 + max(abs(lhs), abs(rhs))), tol_int, len(bump_pts), {"fd": lhs, "closed_form": rhs}))
    div_sum = lambda pair: pair.dt.divH + pair.d.divH
    d_div = fd_derivative(integral(div_sum, 2), step, levels)
    out.append(CheckResult("dt_int_div_H_sum", "integrated", abs(d_div), tol_int, len(bump_pts), {"fd": d_div}))
    return out


def phi_prime_check(family: VariationFamily, step: float = FD_STEP, levels: int = 1) -> dict:
    """φ′₀ by FD against −(1/rank)(Tr_g B)(Ω, g), and d/dt Vol(Ω, ḡ_t) at 0."""
    fam = family if family.normalized else volume_normalized_family(family)
    fd_phi = fd_derivative(fam.phi, step, levels)
    closed = -fam.trace_mean() / fam.rank
    dvol_t = fd_derivative(fam.normalized_volume, step, levels)
    return {"phi_prime_fd": fd_phi, "phi_prime_closed": closed, "phi_prime_residual": abs(fd_phi - closed), "dvol_dt": dvol_t}


# action derivatives ---------------------------------------------------------


def _pl_integrand(family: VariationFamily, which: str):
    """⟨E, B⟩ with E the plain first-variation density of J (divergences dropped)."""

    def fn(pair):
        st = pair.stage
        pri, sec = _roles(pair, family.kind)
        B = family.B(st)
        proj = pri._on_complement
        gblk = _block_metric(st, pri.Q)
        if which == "mix":
            bracket = proj(sec.div_h) - 2 * proj(sec.flat(sec.tcasorati)) + pri.Phi_h + pri.Phi_T + proj(_sym(sec.flat(sec.K)))
            coef = 0.5 * (pair.S_mix + sec.divH - pri.divH)
            E = -bracket + coef[:, None, None, :] * gblk
        elif family.kind == "D":
            E = proj(-sec.div_h - _sym(sec.flat(sec.K))) + (sec.divH + 0.5 * sec.S_ex)[:, None, None, :] * gblk
        else:
            E = -pri.Phi_h + 0.5 * pri.S_ex[:, None, None, :] * gblk
        return pair.ip(E, B)

    return fn


def _densities(family: VariationFamily, which: str, rule: str, metric_fn=None) -> np.ndarray:
    """Action density times dvol on a domain grid, for g (cached) or for the metric from metric_fn."""
    F = _action_integrand(which)
    pts, _ = family.domain.grid(rule)
    fn = lambda pair: _density(F, pair)
    if metric_fn is not None:
        return map_pairs(family.geometry, pts, fn, _action_order(which), metric_fn)
    key = (which, rule)
    if key not in family._base:
        family._base[key] = map_pairs(family.geometry, pts, fn, _action_order(which))
    return family._base[key]


def action_along(family: VariationFamily, which: str, t: float) -> float:
    """J(g_t) − J(g) for the plain flavor; J(ḡ_t) − J(g) (split integrals) for the normalized one."""
    if t == 0.0:
        return 0.0
    _, bw = family.domain.grid("bump")
    base = _densities(family, which, "bump")
    if not family.normalized:
        return float(np.dot(bw, _densities(family, which, "bump", family.metric_fn(t, 1.0)) - base))
    phi = family.phi(t)
    hat = family.hat_metric_fn(t)
    local = _densities(family, which, "bump", family.metric_fn(t, phi)) - _densities(family, which, "bump", hat)
    _, pw = family.domain.grid("plain")
    smooth = _densities(family, which, "plain", hat) - _densities(family, which, "plain")
    return float(np.dot(bw, local)) + float(np.dot(pw, smooth))


def action_derivative(family: VariationFamily, which: str = "mix", step: float = FD_STEP, levels: int = 1) -> float:
    return fd_derivative(lambda t: action_along(family, which, t), step, levels)


def normalized_correction(family: VariationFamily, which: str = "mix") -> float:
    """The term subtracted from dJ(g_t)/dt to give dJ(ḡ_t)/dt."""
    geo, dom = family.geometry, family.domain
    if which == "mix":
        s = sstar_value(geo, dom, f"mix-{family.kind}")
        c = 0.5 * s
    else:
        s = sstar_value(geo, dom, "ex")
        c = 0.5 * s if family.kind == "D" else (geo.n - 2) / (2.0 * geo.n) * s
    return c * family.trace_integral()


def action_derivative_check(family: VariationFamily, which: str = "mix", step: float = FD_STEP, levels: int = 1, tol: float = 1e-5,
                            normalized: bool = True) -> list[CheckResult]:
    """(i) FD of J(g_t) against ∫⟨E, B⟩ dvol; (ii) FD of J(ḡ_t) against FD of J(g_t) minus the S* correction.

    normalized=False skips (ii).
    """
    plain = VariationFamily(family.geometry, family.domain, family.kind, family.profile, family.scalar, normalized=False)
    d_plain = action_derivative(plain, which, step, levels)
    bpts, bw = plain.domain.grid("bump")
    pairing = integrate(plain.geometry, bpts, bw, _pl_integrand(plain, which), order=2)
    r1 = abs(d_plain - pairing) / (1 + max(abs(d_plain), abs(pairing)))
    out = [CheckResult(f"dJ_{which}_plain", "integrated", r1, tol, len(bpts), {"fd": d_plain, "pairing": pairing})]
    if normalized:
        d_norm = action_derivative(volume_normalized_family(plain), which, step, levels)
        corr = normalized_correction(plain, which)
        r2 = abs(d_norm - (d_plain - corr)) / (1 + max(abs(d_norm), abs(d_plain), abs(corr)))
        out.append(CheckResult(f"dJ_{which}_normalized", "integrated", r2, tol, len(bpts), {"fd": d_norm, "fd_plain": d_plain, "correction": corr}))
    return out


def umbilicity_preservation_check(family: VariationFamily, points: int = 32, seed: int = 0, delta: float = 1e-2,
                                  flag_tol: float = 1e-9, tol: float = 1e-6) -> dict:
    """Flags of 𝒟̃ (kind D) or 𝒟 (kind Dtilde) at t = 0 and whether each survives at t = ±δ."""
    geo = family.geometry
    pts = _family_points(family, points, seed)

    def defects(pair):
        st = pair.stage
        own = pair.dt if family.kind == "D" else pair.d
        v = st.value
        rank = own.rank
        umb = own.h - st.ein("k,ij->kij", own.H, _block_metric(st, own.P)) / rank
        nrm = lambda a: np.abs(v(a)).reshape(len(st.points), -1).max(axis=1)
        return {"umbilical": nrm(umb), "geodesic": nrm(own.h), "harmonic": nrm(own.H)}

    out = {}
    base = map_pairs(geo, pts, defects, 1)
    later = [map_pairs(geo, pts, defects, 1, family.metric_fn(s * delta, 1.0)) for s in (1, -1)]
    for k in base:
        holds = bool(base[k].max() < flag_tol)
        after = max(float(l[k].max()) for l in later)
        out[k] = {"initial": holds, "defect_after": after, "preserved": (not holds) or after < tol}
    return out


# Euler–Lagrange residuals ----------------------------------------------------

SYSTEMS = (
    "mix-perp", "mix-tangent", "ex-perp", "ex-tangent", "flow-perp", "flow-tangent",
    "codim1-perp", "codim1-tangent", "biconformal", "umbilical", "geodesic-riemannian", "geodesic-integrable",
)


@dataclass
class ELContext:
    """Mean values S*(Ω, g) used by a system; zeros for plain variations."""

    geometry: Geometry
    domain: Domain | None
    volume_preserving: bool = False

    def sstar(self, key: str) -> float:
        if not self.volume_preserving:
            return 0.0
        domain = self.domain or make_domain(self.geometry)
        return sstar_value(self.geometry, domain, key)


def _tensor_res(lhs, rhs, terms, v):
    return residual(v(lhs), v(rhs), *[v(t) for t in terms])


def _mix_general(pair: PairData, kind: str, sstar: float) -> dict:
    """The g⊥ (or g̃) mixed equation in expanded form and the raw form with div h̃."""
    st = pair.stage
    v = st.value
    pri, sec = _roles(pair, kind)
    proj = pri._on_complement
    gblk = _block_metric(st, pri.Q)
    tc = proj(sec.flat(sec.tcasorati))
    Kf = proj(_sym(sec.flat(sec.K)))
    terms = {
        "r": pri.r,
        "h_dot_H": -proj(sec.h_dot_H),
        "casorati": proj(sec.flat(sec.casorati)),
        "tcasorati": -tc,
        "Phi_h": pri.Phi_h,
        "Phi_T": pri.Phi_T,
        "Psi": proj(pri.Psi),
        "Def_H": -pri.Def_H,
        "K": Kf,
    }
    coef = 0.5 * (pair.S_mix - sstar + sec.divH - pri.divH)
    rhs = coef[:, None, None, :] * gblk
    lhs = sum(terms.values())
    raw_terms = [proj(sec.div_h), -2 * tc, pri.Phi_h, pri.Phi_T, Kf]
    raw = sum(raw_terms)
    return {
        "main": _tensor_res(lhs, rhs, list(terms.values()), v),
        "raw": _tensor_res(raw, rhs, raw_terms, v),
        "consistency": _tensor_res(lhs, raw, list(terms.values()) + raw_terms, v),
        "_lhs": lhs, "_raw": raw, "_rhs": rhs,
    }


def _ex_system(pair: PairData, kind: str, sstar: float) -> dict:
    st = pair.stage
    v = st.value
    dt, d = pair.dt, pair.d
    p, n = st.geometry.p, st.geometry.n
    if kind == "D":
        proj = dt._on_complement
        gp = _block_metric(st, st.Pp)
        lhs = proj(d.div_h) + proj(_sym(d.flat(d.K)))
        raw_rhs = (d.divH + 0.5 * (d.S_ex - sstar))[:, None, None, :] * gp
        elim = (-(d.S_ex - sstar) / (2 * (p - 1)))[:, None, None, :] * gp
        trace_rhs = p / (2 * (1 - p)) * (d.S_ex - sstar)
        return {
            "raw": _tensor_res(lhs, raw_rhs, [proj(d.div_h), d.divH[:, None, None, :] * gp], v),
            "main": _tensor_res(lhs, elim, [proj(d.div_h), d.divH[:, None, None, :] * gp], v),
            "trace": residual(v(d.divH), v(trace_rhs)),
        }
    gt = _block_metric(st, st.Pt)
    lhs = d.Phi_h
    raw_rhs = (0.5 * (d.S_ex - (n - 2) / n * sstar))[:, None, None, :] * gt
    elim = (d.S_ex / n)[:, None, None, :] * gt
    out = {
        "raw": _tensor_res(lhs, raw_rhs, [], v),
        "main": _tensor_res(lhs, elim, [], v),
    }
    if n != 2:
        out["trace"] = residual(v(d.S_ex), np.full(len(st.points), sstar))
    return out


def _flow_system(pair: PairData, kind: str, sstar: float) -> dict:
    """n = 1: 𝒟̃ spanned by a unit field N (the leaf data of Codim1Data with swap)."""
    st = pair.stage
    v = st.value
    c1 = Codim1Data(pair, swap=True)
    eps = c1.eps[:, None]
    dt, d = pair.dt, pair.d
    line_flow = d  # data of 𝒟, whose h̃ is N-valued
    if kind == "D":
        proj = dt._on_complement
        gp = _block_metric(st, st.Pp)
        A = c1.A_N
        Tn = st.ein("l,lab->ab", c1.N, d.Tsh)
        op = c1.R_N + st.sp.matmul(A, A) - st.sp.matmul(Tn, Tn) + st.sp.matmul(Tn, A) - st.sp.matmul(A, Tn)
        opf = proj(_sym(st.ein("ab,ac->bc", op, st.g)))
        tau1 = c1.tau1
        terms = [
            eps[..., None, None] * opf,
            -tau1[:, None, None, :] * c1.h_sc,
            st.ein("i,j->ij", dt.Hl, dt.Hl),
            -dt.Def_H,
        ]
        lhs = sum(terms)
        flux = st.ein(",i->i", eps * tau1, c1.N) - dt.H
        coef = 0.5 * (eps * c1.Ric_N - sstar + st.div_vector(flux))
        rhs = coef[:, None, None, :] * gp
        general = _mix_general(pair, "D", sstar)
        return {
            "main": _tensor_res(lhs, rhs, terms, v),
            "vs_general": _tensor_res(lhs - rhs, general["_lhs"] - general["_rhs"], terms, v),
        }
    flux = st.ein(",i->i", eps * c1.tau1, c1.N) + dt.H
    terms = [eps * c1.Ric_N, -4 * d.TT, -st.div_vector(flux)]
    lhs = sum(terms) + sstar
    general = _mix_general(pair, "Dtilde", sstar)
    gen = st.ein("ij,ij->", st.gi, general["_lhs"] - general["_rhs"])
    # the tangent block is one-dimensional: the tensor equation is (scalar)·g̃ and its trace is −½ × the scalar form
    return {
        "main": residual(v(lhs), np.zeros(len(st.points)), *[v(t) for t in terms]),
        "vs_general": residual(v(lhs), v(-2 * gen), *[v(t) for t in terms]),
    }


def _codim1_system(pair: PairData, kind: str, sstar: float) -> dict:
    """p = 1: the scalar normal equation (g⊥) or the leaf equation (g̃), with the Ric_𝒟 cross-checks."""
    st = pair.stage
    v = st.value
    c1 = Codim1Data(pair)
    eps = c1.eps[:, None]
    t1, t2 = c1.tau1, c1.tau2
    t1sq = st.sp.mul(t1, t1)
    npts = len(st.points)
    grav = _gravity(pair, c1)
    if kind == "D":
        lhs = t1sq - t2
        rhs = -eps * sstar * np.ones_like(lhs)
        return {
            "main": residual(v(lhs), v(rhs)),
            "gravity_NN": residual(v(grav["NN"]), 0.5 * v(lhs)),
            "gravity_antisym": grav["antisym"],
        }
    gt = _block_metric(st, st.Pt)
    lhs = c1.nabla_N_hsc - t1[:, None, None, :] * c1.h_sc
    ode = c1.N_tau1 - t1sq
    plain = 0.5 * (2 * eps * ode + eps * (t1sq - t2))
    rhs = (plain - 0.5 * sstar)[:, None, None, :] * gt
    terms = [c1.nabla_N_hsc, t1[:, None, None, :] * c1.h_sc]
    return {
        "main": _tensor_res(lhs, rhs, terms, v),
        "gravity_leaf": _tensor_res(grav["leaf"], lhs - plain[:, None, None, :] * gt, terms, v),
        "gravity_antisym": grav["antisym"],
        "trace": residual(v(st.ein("ij,ij->", st.gi, lhs)), v(eps * ode), v(t1sq), v(c1.N_tau1)),
        "_n": np.full(npts, st.geometry.n),
    }


def _gravity(pair: PairData, c1: Codim1Data) -> dict:
    """Ric_𝒟 − ½ Scal_𝒟 g + Ric_N (N♭⊗N♭ − ½ ε_N g) on (N, N) and on leaf pairs.

    Ric_𝒟(X, Y) = (∇_N h_sc − τ₁ h_sc)(X, Y), Ric_𝒟(N, N) = −div H̃ and
    Ric_𝒟(X, N) = −Ric_𝒟(N, X) = div(A_N X), so Scal_𝒟 = Tr_g Ric_𝒟 and the
    symmetric part has no mixed components.  `antisym` is max_k |div(A_N P∂_k)|.
    """
    st = pair.stage
    v = st.value
    eps = c1.eps[:, None]
    leaf = c1.nabla_N_hsc - c1.tau1[:, None, None, :] * c1.h_sc
    nn_ric = -c1.div_H_line
    scal = st.ein("ij,ij->", st.gi, leaf) + eps * nn_ric
    gt = _block_metric(st, st.Pt)
    leaf_eq = leaf - 0.5 * (scal + eps * c1.Ric_N)[:, None, None, :] * gt
    nn = nn_ric - 0.5 * eps * scal + 0.5 * c1.Ric_N
    AX = st.ein("ab,bk->ak", c1.A_N, c1.leaf.P)
    mixed = np.stack([v(st.div_vector(AX[:, :, k, :])) for k in range(st.m)], axis=1)
    return {"NN": nn, "leaf": leaf_eq, "antisym": np.abs(mixed).max(axis=1)}


def _biconformal_scalar(pair: PairData, kind: str, sstar):
    """Trace of the raw g⊥ (or g̃) equation over the varied block, sign fixed so that ∫ s·E = dJ/dt."""
    pri, sec = _roles(pair, kind)
    r = pair.stage.geometry.p if kind == "D" else pair.stage.geometry.n
    return ((r - 1) * sec.divH + 0.5 * (r - 2) * pri.S_ex + 0.5 * (r - 4) * sec.TT
            + 0.5 * r * (sec.S_ex - sstar) + 0.5 * (r + 2) * pri.TT)


def biconformal_pairing_check(family: VariationFamily, step: float = FD_STEP, levels: int = 1, tol: float = 1e-7) -> CheckResult:
    """For B = s·bump·g⊥ (or s·bump·g̃): dJ_mix/dt against ∫ s·bump·E dvol, E the scalar Euler–Lagrange expression."""
    if family.scalar is None or family.normalized:
        raise HypothesisViolated("needs a plain conformal family B = s·g⊥")
    d_plain = action_derivative(family, "mix", step, levels)
    pts, w = family.domain.grid("bump")

    def fn(pair):
        st = pair.stage
        weight = st.sp.mul(st.scalar(family.scalar), family.domain.bump_jets(st.sp, st.X))
        return st.sp.mul(weight, _biconformal_scalar(pair, family.kind, 0.0))

    pairing = integrate(family.geometry, pts, w, fn, order=2)
    r = abs(d_plain - pairing) / (1 + max(abs(d_plain), abs(pairing)))
    return CheckResult(f"biconformal_pairing_{family.kind}", "integrated", r, tol, len(pts), {"fd": d_plain, "pairing": pairing})


def _biconformal_system(pair: PairData, kind: str, sstar: float) -> dict:
    st = pair.stage
    v = st.value
    pri, sec = _roles(pair, kind)
    E = _biconformal_scalar(pair, kind, sstar)
    general = _mix_general(pair, kind, sstar)
    tr = st.ein("ij,ij->", st.gi, general["_raw"] - general["_rhs"])
    terms = [sec.divH, pri.S_ex, sec.TT, sec.S_ex, pri.TT]
    out = {
        "main": residual(v(E), np.zeros(len(st.points)), *[v(t) for t in terms]),
        "vs_trace": residual(v(E), -v(tr), *[v(t) for t in terms]),
    }
    f = getattr(st.geometry, "dilation", None)
    if f is not None:
        out.update(_csuf_forms(pair, kind, sstar, f))
    return out


def _csuf_forms(pair: PairData, kind: str, sstar: float, f) -> dict:
    """Conformal-submersion forms of the biconformal equation (with T = 0 and umbilical fibers)."""
    st = pair.stage
    v = st.value
    n, p = st.geometry.n, st.geometry.p
    fj = st.scalar(f)
    top = st.ein("ij,j->i", st.Pt, st.gradient(fj))
    lap = st.partial_div_vector(top, st.Pt)
    sq = st.ein("i,i->", top, st.ein("ij,j->i", st.g, top))
    HH, TTt, divH = pair.dt.HH, pair.d.TT, pair.dt.divH
    if kind == "D":
        terms = [-2 * p * (p - 1) * lap, -p * p * (p - 1) * sq, (p - 2) * (n - 1) / n * HH, (p - 4) * TTt]
        lhs, rhs = sum(terms), p * sstar
        S_formula = -p * (lap + sq) + (p - 4) / p * TTt + (n - 1) * (p - 2) / (n * p) * HH + (p - 2) / p * divH
        S_general = sstar_integrand(pair, "D")
    else:
        terms = [p * (p - 1) * (n - 2) * sq, 2 * (n - 1) * divH, (n - 1) * HH, (n + 2) * TTt]
        lhs, rhs = sum(terms), n * sstar
        S_formula = -p * (n - 2) / n * (lap + sq) + (n + 2) / n * TTt + divH + (n - 1) / n * HH
        S_general = sstar_integrand(pair, "Dtilde")
    E = _biconformal_scalar(pair, kind, sstar)
    return {
        "csuf": residual(v(lhs), np.full(len(st.points), rhs), *[v(t) for t in terms]),
        "csuf_vs_general": residual(v(lhs) - rhs, (2 * v(E)) * (1 if kind == "D" else 1), *[v(t) for t in terms]),
        "sstar_formula": residual(v(S_formula), v(S_general)),
    }


def _umbilical_system(pair: PairData, kind: str, sstar: float) -> dict:
    st = pair.stage
    v = st.value
    n, p = st.geometry.n, st.geometry.p
    dt, d = pair.dt, pair.d
    gp = _block_metric(st, st.Pp)
    HH = st.ein("i,j->ij", dt.Hl, dt.Hl)
    Ht2 = d.HH
    ident_l = dt.r + HH / n - dt.Def_H
    ident_r = ((1 / p) * ((p - 1) / p * Ht2 + d.divH))[:, None, None, :] * gp
    el_l = dt.r + HH - dt.Def_H
    el_r = (0.5 * (pair.S_mix - sstar + 2 * (p - 1) / p**2 * Ht2 + d.divH - dt.divH))[:, None, None, :] * gp
    conc = (pair.S_mix / p)[:, None, None, :] * gp
    return {
        "main": _tensor_res(dt.r, conc, [], v),
        "identity": _tensor_res(ident_l, ident_r, [dt.r, HH, dt.Def_H], v),
        "el": _tensor_res(el_l, el_r, [dt.r, HH, dt.Def_H], v),
        "leaves_geodesic": np.abs(v(dt.H)).max(axis=1),
    }


def _geodesic_riemannian_system(pair: PairData, kind: str, sstar: float) -> dict:
    st = pair.stage
    v = st.value
    d, dt = pair.d, pair.dt
    gp = _block_metric(st, st.Pp)
    tc = dt._on_complement(d.flat(d.tcasorati))
    return {
        "main": _tensor_res(dt.r, (pair.S_mix / st.geometry.p)[:, None, None, :] * gp, [], v),
        "identity": _tensor_res(dt.r, -tc, [], v),
        "el": _tensor_res(dt.r, (0.25 * (pair.S_mix - sstar))[:, None, None, :] * gp, [], v),
    }


def _geodesic_integrable_system(pair: PairData, kind: str, sstar: float) -> dict:
    st = pair.stage
    v = st.value
    d, dt = pair.d, pair.dt
    p, n = st.geometry.p, st.geometry.n
    gp = _block_metric(st, st.Pp)
    gt = _block_metric(st, st.Pt)
    X = d.h - st.ein("k,ij->kij", d.H, gp) / p
    divX = dt._on_complement(st.div_tensor(X))
    zero = np.zeros(len(st.points))
    out = {
        "div_condition": residual(v(divX), np.zeros_like(v(divX)), v(dt._on_complement(d.div_h))),
        "phi_condition": _tensor_res(d.Phi_h, (d.S_ex / n)[:, None, None, :] * gt, [], v),
    }
    out["main"] = np.maximum(out["div_condition"], out["phi_condition"])
    return out


def _hopf_form(pair: PairData, sstar: float) -> np.ndarray:
    """Both distributions totally geodesic: r_𝒟 − 𝓣̃♭ + Φ_T + Ψ = ½(S_mix − S*) g⊥."""
    st = pair.stage
    v = st.value
    dt, d = pair.dt, pair.d
    proj = dt._on_complement
    terms = [dt.r, -proj(d.flat(d.tcasorati)), dt.Phi_T, proj(dt.Psi)]
    rhs = (0.5 * (pair.S_mix - sstar))[:, None, None, :] * _block_metric(st, st.Pp)
    return _tensor_res(sum(terms), rhs, terms, v)


def _sstar_key(system: str) -> tuple[str, str]:
    """(variation kind, S* cache key) of a system."""
    kind = "Dtilde" if system.endswith("tangent") else "D"
    if system.startswith("ex-"):
        return kind, "ex"
    return kind, f"mix-{kind}"


def _check_hypotheses(geometry: Geometry, system: str) -> None:
    n, p = geometry.n, geometry.p
    if system.startswith("flow") and n != 1:
        raise HypothesisViolated(f"{system} needs n = 1")
    if system.startswith("codim1") and p != 1:
        raise HypothesisViolated(f"{system} needs p = 1")
    if system == "ex-perp" and p < 2:
        raise HypothesisViolated("ex-perp needs p > 1")
    if system == "umbilical" and (n < 2 or p < 2):
        raise HypothesisViolated("umbilical needs n, p > 1")
    if system == "biconformal" and p < 2:
        raise HypothesisViolated("biconformal needs p > 1")


_STRUCTURE = {
    # system: [(description, defect function)] evaluated at the points
    "umbilical": [
        ("Dtilde umbilical", lambda pr: pr.dt.h - pr.stage.ein("k,ij->kij", pr.dt.H, _block_metric(pr.stage, pr.stage.Pt)) / pr.stage.geometry.n),
        ("D umbilical", lambda pr: pr.d.h - pr.stage.ein("k,ij->kij", pr.d.H, _block_metric(pr.stage, pr.stage.Pp)) / pr.stage.geometry.p),
        ("Dtilde integrable", lambda pr: pr.dt.T),
        ("D integrable", lambda pr: pr.d.T),
    ],
    "geodesic-riemannian": [("Dtilde geodesic", lambda pr: pr.dt.h), ("Dtilde integrable", lambda pr: pr.dt.T), ("Riemannian", lambda pr: pr.d.h)],
    "geodesic-integrable": [("Dtilde geodesic", lambda pr: pr.dt.h), ("Dtilde integrable", lambda pr: pr.dt.T), ("D integrable", lambda pr: pr.d.T)],
    "biconformal": [
        ("Dtilde umbilical", lambda pr: pr.dt.h - pr.stage.ein("k,ij->kij", pr.dt.H, _block_metric(pr.stage, pr.stage.Pt)) / pr.stage.geometry.n),
        ("D umbilical", lambda pr: pr.d.h - pr.stage.ein("k,ij->kij", pr.d.H, _block_metric(pr.stage, pr.stage.Pp)) / pr.stage.geometry.p),
        ("Dtilde integrable", lambda pr: pr.dt.T),
    ],
    "codim1-perp": [("Dtilde integrable", lambda pr: pr.dt.T)],
    "codim1-tangent": [("Dtilde integrable", lambda pr: pr.dt.T)],
}

STRUCTURE_TOL = 1e-8

_SYSTEM_FN = {
    "mix-perp": lambda pair, s: _mix_general(pair, "D", s),
    "mix-tangent": lambda pair, s: _mix_general(pair, "Dtilde", s),
    "ex-perp": lambda pair, s: _ex_system(pair, "D", s),
    "ex-tangent": lambda pair, s: _ex_system(pair, "Dtilde", s),
    "flow-perp": lambda pair, s: _flow_system(pair, "D", s),
    "flow-tangent": lambda pair, s: _flow_system(pair, "Dtilde", s),
    "codim1-perp": lambda pair, s: _codim1_system(pair, "D", s),
    "codim1-tangent": lambda pair, s: _codim1_system(pair, "Dtilde", s),
    "biconformal": lambda pair, s: _biconformal_system(pair, "D", s),
    "biconformal-tangent": lambda pair, s: _biconformal_system(pair, "Dtilde", s),
    "umbilical": lambda pair, s: _umbilical_system(pair, "D", s),
    "geodesic-riemannian": lambda pair, s: _geodesic_riemannian_system(pair, "D", s),
    "geodesic-integrable": lambda pair, s: _geodesic_integrable_system(pair, "D", s),
}
SYSTEMS = tuple(_SYSTEM_FN)


@dataclass
class ELResult:
    system: str
    sstar: float
    volume_preserving: bool
    fields: dict

    @property
    def main(self) -> np.ndarray:
        return self.fields["main"]

    def max(self, key: str = "main") -> float:
        return float(np.max(self.fields[key]))


def el_residual(geometry: Geometry, points, system: str, domain: Domain | None = None, volume_preserving: bool = False,
                check_structure: bool = True) -> ELResult:
    """Per-point residual fields of one Euler–Lagrange system.

    `main` is the cited equation; other keys hold the built-in cross-checks.
    Mean values S*(Ω, g) enter only with volume_preserving=True; Ω defaults
    to make_domain(geometry).
    """
    if system not in _SYSTEM_FN:
        raise ConfigError("/system", f"unknown system {system!r}; expected one of {SYSTEMS}")
    _check_hypotheses(geometry, system)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    ctx = ELContext(geometry, domain, volume_preserving)
    kind, key = _sstar_key(system)
    sstar = ctx.sstar(key)
    hopf = system == "mix-perp" and "geodesic" in geometry.flags.get("dtilde", []) and "geodesic" in geometry.flags.get("d", [])
    checks = _STRUCTURE.get(system, []) if check_structure else []

    def fn(pair):
        out = {k: np.asarray(val) for k, val in _SYSTEM_FN[system](pair, sstar).items() if not k.startswith("_")}
        if hopf:
            out["hopf"] = _hopf_form(pair, sstar)
        for name, defect in checks:
            out["structure:" + name] = np.abs(pair.stage.value(defect(pair))).reshape(len(pair.stage.points), -1).max(axis=1)
        return out

    order = 3 if system.startswith("codim1") or system.startswith("flow") else 2
    fields = map_pairs(geometry, pts, fn, order)
    for name, _ in checks:
        worst = float(fields["structure:" + name].max())
        if worst > STRUCTURE_TOL:
            raise HypothesisViolated(f"{name} (defect {worst:.1e})")
    return ELResult(system, sstar, volume_preserving, fields)


# S* specializations ----------------------------------------------------------


def sstar_specializations(geometry: Geometry, points) -> dict:
    """Pointwise differences between the general S* and its foliation / codim-1 / flow forms."""
    n, p = geometry.n, geometry.p

    def fn(pair):
        st = pair.stage
        v = st.value
        out = {}
        gen_d, gen_t = sstar_integrand(pair, "D"), sstar_integrand(pair, "Dtilde")
        dt, d = pair.dt, pair.d
        if float(np.abs(v(dt.T)).max()) < STRUCTURE_TOL:
            fol_d = pair.S_mix - (2 / p) * (dt.S_ex + 2 * d.TT + dt.divH)
            fol_t = pair.S_mix - (2 / n) * (d.S_ex - d.TT + d.divH)
            out["foliation_perp"] = residual(v(gen_d), v(fol_d))
            out["foliation_tangent"] = residual(v(gen_t), v(fol_t))
        if p == 1 and "foliation_perp" in out:
            c1 = Codim1Data(pair)
            eps = c1.eps[:, None]
            one_d = eps * c1.Ric_N - 2 * eps * (c1.N_tau1 - c1.tau2)
            one_t = eps * c1.Ric_N - (2 / n) * c1.div_H_line
            out["codim1_perp"] = residual(v(gen_d), v(one_d))
            out["codim1_tangent"] = residual(v(gen_t), v(one_t))
        if n == 1:
            c1 = Codim1Data(pair, swap=True)
            eps = c1.eps[:, None]
            fl_d = eps * c1.Ric_N - 2 * ((2 / p) * d.TT + (1 / p) * dt.divH)
            fl_t = eps * c1.Ric_N - 2 * (eps * (c1.N_tau1 - c1.tau2) - d.TT)
            out["flow_perp"] = residual(v(gen_d), v(fl_d))
            out["flow_tangent"] = residual(v(gen_t), v(fl_t))
        return out

    return map_pairs(geometry, np.atleast_2d(points), fn, 3)
