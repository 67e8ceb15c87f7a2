"""Example geometries with known structure, critical constructions and the codimension-one ODE tools.

Twisted products use the convention g = e^{2 f1} g1 + e^{2 f2} g2, for which
the umbilicity formulas h = −(∇⊥f1) g̃ and H = −n ∇⊥f1 hold exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import exprlang
from .calculus import Stage
from .chart import Geometry, make_geometry
from .errors import (
    InconsistentCurvatures,
    InitialValueOutOfRange,
    NotCodimOne,
    OdeDiverged,
    SubstitutionDomainError,
)
from .extrinsic import Codim1Data, PairData
from .jets import Jet
from .sampling import map_pairs, residual, sample_points

RK4_STEP = 1e-3


def _src(e) -> str:
    if isinstance(e, (int, float)):
        return repr(float(e))
    if isinstance(e, str):
        return e
    return exprlang.to_source(e)


def _block(a, b):
    """Block-diagonal matrix of source strings."""
    n, p = len(a), len(b)
    out = [["0"] * (n + p) for _ in range(n + p)]
    for i in range(n):
        for j in range(n):
            out[i][j] = _src(a[i][j])
    for i in range(p):
        for j in range(p):
            out[n + i][n + j] = _src(b[i][j])
    return out


def _coordinate_frame(n: int, m: int):
    return [["1" if i == a else "0" for i in range(m)] for a in range(n)]


def _diag(entries):
    k = len(entries)
    return [[_src(entries[i]) if i == j else "0" for j in range(k)] for i in range(k)]


# plain builtins ---------------------------------------------------------


def flat_product(n: int = 1, p: int = 2) -> Geometry:
    m = n + p
    flags = {"dtilde": ["geodesic", "integrable"], "d": ["geodesic", "integrable"], "S_mix": 0.0, "critical": ["mix-perp", "mix-tangent"]}
    return make_geometry(
        f"flat_product", n, p, [[-1.0, 1.0]] * m, _diag(["1"] * m), _coordinate_frame(n, m), flags=flags
    )


def sphere_theta_foliation() -> Geometry:
    """Unit sphere dθ² + sin²θ dφ² with 𝒟̃ tangent to the meridians (θ-curves)."""
    return make_geometry(
        "sphere_theta_foliation", 1, 1, [[0.3, math.pi - 0.3], [-1.0, 2.0]], [["1", "0"], ["0", "sin(x0)^2"]], [["1", "0"]],
        flags={"dtilde": ["geodesic", "integrable"], "d": ["integrable"], "S_mix": 1.0},
    )


def warped_line() -> Geometry:
    """dt² + e^{2t} dx² with leaves t = const (𝒟̃ = span ∂x, 𝒟 = span ∂t)."""
    return make_geometry(
        "warped_line", 1, 1, [[-0.5, 1.5], [-0.5, 1.5]], [["1", "0"], ["0", "exp(2*x0)"]], [["0", "1"]],
        flags={"dtilde": ["integrable", "umbilical"], "d": ["geodesic", "integrable"], "S_mix": -1.0},
    )


def heisenberg_flow() -> Geometry:
    """dx² + dy² + (dz − x dy)² with the unit Killing flow 𝒟̃ = span ∂z."""
    return make_geometry(
        "heisenberg_flow", 1, 2, [[-1.0, 1.0]] * 3, [["1", "0", "0"], ["0", "1 + x0^2", "-x0"], ["0", "-x0", "1"]], [["0", "0", "1"]],
        flags={"dtilde": ["geodesic", "integrable"], "d": ["geodesic"], "S_mix": 0.5},
    )


def double_twisted_product(g1, g2, f1, f2, box, name: str = "double_twisted", q: int = 0, flags=None) -> Geometry:
    """e^{2 f1} g1 ⊕ e^{2 f2} g2 on a product chart, 𝒟̃ tangent to the first factor.

    g1 (n×n) and g2 (p×p) are Expr matrices in the global coordinates; the
    first n coordinates belong to the first factor.
    """
    n, p = len(g1), len(g2)
    e1, e2 = _src(f1), _src(f2)
    a = [[f"exp(2*({e1}))*({_src(v)})" if _src(v) != "0" else "0" for v in row] for row in g1]
    b = [[f"exp(2*({e2}))*({_src(v)})" if _src(v) != "0" else "0" for v in row] for row in g2]
    base = {"dtilde": ["integrable", "umbilical"], "d": ["integrable", "umbilical"]}
    geo = make_geometry(name, n, p, box, _block(a, b), _coordinate_frame(n, n + p), q=q, flags={**base, **(flags or {})})
    geo.twist = (exprlang.as_expr(e1), exprlang.as_expr(e2))
    return geo


def lorentz_product() -> Geometry:
    return double_twisted_product(
        [["-1", "0"], ["0", "1"]], [["1", "0"], ["0", "1"]], "0.2*sin(x2) + 0.1*x0*x3", "0.15*x1*x2 + 0.1*cos(x0)",
        [[-1.0, 1.0]] * 4, name="lorentz_product", q=1,
    )


def double_twisted() -> Geometry:
    return double_twisted_product([["1", "0"], ["0", "1"]], [["1", "0"], ["0", "1"]], "x2^2", "x0^2", [[-0.8, 0.8]] * 4)


def codim1_biregular() -> Geometry:
    """A generic biregular codimension-one chart: leaves x0 = const, diagonal metric."""
    return make_geometry(
        "codim1_biregular", 2, 1, [[-0.5, 0.5], [-1.0, 1.0], [-1.0, 1.0]],
        _diag(["1 + 0.5*x0^2 + 0.2*sin(x1)", "exp(2*x0)", "exp(x0)*(1 + 0.3*x1^2)"]), [["0", "1", "0"], ["0", "0", "1"]],
        flags={"dtilde": ["integrable"], "d": ["integrable", "umbilical"], "biregular": True},
    )


def conformal_submersion_metric(f, base_g, fiber_g, box, name: str = "conformal_submersion", flags=None) -> Geometry:
    """fiber_g ⊕ e^{2f} base_g with 𝒟̃ tangent to the fibers (the first n coordinates).

    The dilation of the projection onto the base is f; fibers are totally
    umbilical by construction.
    """
    n = len(fiber_g)
    ef = _src(f)
    base = [[f"exp(2*({ef}))*({_src(v)})" if _src(v) != "0" else "0" for v in row] for row in base_g]
    default = {"dtilde": ["integrable"], "d": ["umbilical"], "conformal_submersion": True}
    geo = make_geometry(name, n, len(base_g), box, _block(fiber_g, base), _coordinate_frame(n, n + len(base_g)), flags={**default, **(flags or {})})
    geo.dilation = exprlang.as_expr(ef)
    return geo


def conformal_submersion() -> Geometry:
    return conformal_submersion_metric(
        "0.4*x0 + 0.2*x0*x1", [["1", "0"], ["0", "1 + 0.3*x1^2"]], [["1 + 0.2*x1^2"]], [[-1.0, 1.0]] * 3
    )


# critical constructions ---------------------------------------------------


def twisted_critical() -> Geometry:
    """Twisted product critical for g⊥-variations: f1 = 0 and e^{(p/2) f2} = 1 + x0 leafwise harmonic."""
    return double_twisted_product(
        [["1", "0"], ["0", "1"]], [["1", "0"], ["0", "1"]], "0", "log(1 + x0)",
        [[0.0, 1.0], [-1.0, 1.0], [-1.0, 1.0], [-1.0, 1.0]], name="twisted_critical",
        flags={"critical": ["mix-perp", "ex-perp", "biconformal", "umbilical"], "dtilde": ["integrable", "umbilical", "geodesic"]},
    )


def harmonic_exponent(n: int, p: int) -> float:
    """λ such that e^{λf} is fiberwise harmonic for critical conformal submersions with geodesic fibers."""
    return (p * n + (p - 2) * (n - 2)) / (2 * n)


def conformal_harmonic(n: int = 1, p: int = 2) -> Geometry:
    """Flat fibers and base with e^{λ f} affine along the fibers, so Δ̃ e^{λ f} = 0."""
    lam = harmonic_exponent(n, p)
    lin = " + ".join(f"{0.3 / (a + 1)}*x{a}" for a in range(n))
    f = f"log(1 + {lin} + 0.2*x{n})/{lam!r}"
    box = [[-1.0, 1.0]] * (n + p)
    flags = {"dtilde": ["integrable", "geodesic"]}
    if p == 2:
        # with p = 2 the harmonic condition is the whole criticality condition
        flags["critical"] = ["mix-perp", "ex-perp", "biconformal"] + (["flow-perp"] if n == 1 else [])
    return conformal_submersion_metric(f, _diag(["1"] * p), _diag(["1"] * n), box, name="conformal_harmonic", flags=flags)


def tau1_closed_form(C: float, tau0, t):
    """Solution of N(τ₁) − τ₁² = C along a unit-speed normal curve with τ₁(0) = τ0.

    Works on floats, arrays and jets alike.
    """
    if C > 0:
        raise InitialValueOutOfRange("the constant must be non-positive")
    c = math.sqrt(-C)
    t0 = tau0.c[..., 0] if isinstance(tau0, Jet) else np.asarray(tau0)
    if np.any(np.abs(t0) > c * (1 + 1e-12)):
        raise InitialValueOutOfRange(f"|τ₁(0)| must not exceed {c}")
    if c == 0:
        return tau0 * 0.0
    e = (-2.0 * c * t).exp() if isinstance(t, Jet) else np.exp(-2.0 * c * t)
    return c * (1 - 2 * (c - tau0) / ((c + tau0) * e + c - tau0))


# codimension-one ansatz ---------------------------------------------------


def _rk4(rhs, y0, steps: int):
    """Classical RK4 on σ ∈ [0, 1] with `steps` equal steps; states support + and scalar *."""
    h = 1.0 / steps
    y = list(y0)
    for k in range(steps):
        s = k * h
        k1 = rhs(s, y)
        k2 = rhs(s + 0.5 * h, [a + (0.5 * h) * b for a, b in zip(y, k1)])
        k3 = rhs(s + 0.5 * h, [a + (0.5 * h) * b for a, b in zip(y, k2)])
        k4 = rhs(s + h, [a + h * b for a, b in zip(y, k3)])
        y = [a + (h / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)]
    return y


@dataclass
class Codim1Ansatz:
    """g = g00 dt² + Σ ε_i f_i exp(−2∫ √|g00| y_i dt) dx_i² with the y_i solving a linear ODE.

    Along each normal line y_i' = √|g00| (τ₁ y_i + C/n), where τ₁ is the
    closed-form solution in arclength with τ₁(t0) = Σ y_i(t0).  The ODE is
    integrated by RK4 over σ ∈ [0, 1] on t0 + σ(t − t0), in jet arithmetic,
    so every metric derivative is exact up to the integration error.
    Coordinate 0 is t.
    """

    g00: exprlang.Expr
    f: tuple
    y0: tuple
    C: float
    t0: float = 0.0
    eps: tuple | None = None
    step: float = RK4_STEP

    def metric(self, sp, X):
        n = len(self.f)
        coords = [Jet(X[..., v, :], sp) for v in range(n + 1)]
        batch = X.shape[:-2]
        lift = lambda v: v if isinstance(v, Jet) else Jet(sp.constant(v, batch), sp)
        ev = lambda e, pt: lift(exprlang.evaluate(exprlang.as_expr(e), pt, {}))
        span = coords[0] - self.t0
        reach = float(np.max(np.abs(span.c[..., 0]))) if span.c.size else 0.0
        steps = max(1, int(math.ceil(reach / self.step)))
        y_init = [ev(y, coords) for y in self.y0]
        tau0 = sum(y_init[1:], y_init[0])

        def rhs(sigma, state):
            pt = [span * sigma + self.t0] + coords[1:]
            root = abs(ev(self.g00, pt)) ** 0.5
            tau = tau1_closed_form(self.C, tau0, state[-1])
            out = [span * (root * (tau * state[i] + self.C / n)) for i in range(n)]
            out += [span * (root * state[i]) for i in range(n)]
            out.append(span * root)
            return out

        zero = lift(0.0)
        state = _rk4(rhs, y_init + [zero] * n + [zero], steps)
        g = np.zeros(batch + (n + 1, n + 1, sp.ncoef))
        g[..., 0, 0, :] = ev(self.g00, coords).c
        eps = self.eps or (1.0,) * n
        for i in range(n):
            gi = ev(self.f[i], coords) * (state[n + i] * -2.0).exp() * eps[i]
            if not np.all(np.isfinite(gi.c)):
                raise OdeDiverged("ansatz integration produced non-finite values")
            g[..., i + 1, i + 1, :] = gi.c
        return g


def codim1_ansatz(g00, f, y0, C: float, box, t0: float = 0.0, eps=None, name: str = "codim1_ansatz", check_points: int = 16) -> Geometry:
    """Biregular codimension-one metric with prescribed principal curvatures y_i of the leaves.

    Checks Σ y_i = τ₁ (the trace of A_N) on a few sample points.
    """
    n = len(f)
    if C > 0:
        raise InitialValueOutOfRange("the constant must be non-positive")
    ans = Codim1Ansatz(exprlang.as_expr(g00), tuple(exprlang.as_expr(e) for e in f), tuple(exprlang.as_expr(e) for e in y0), float(C), t0, eps)
    placeholder = _diag([_src(g00)] + ["1"] * n)
    q = sum(1 for e in (eps or ()) if e < 0)
    geo = make_geometry(name, n, 1, box, placeholder, _coordinate_frame(n + 1, n + 1)[1:], q=q, flags={"biregular": True})
    geo.metric_provider = ans.metric
    geo.ansatz = ans
    pts = sample_points(geo, check_points, seed=7)
    got = map_pairs(geo, pts, lambda pair: Codim1Data(pair, normal_axis=0).value(Codim1Data(pair, normal_axis=0).tau1), order=1)
    want = _trace_y(ans, pts)
    if np.max(np.abs(got - want)) > 1e-7:
        raise InconsistentCurvatures(f"Σ y_i differs from τ₁ by {np.max(np.abs(got - want)):.2e}")
    return geo


def _trace_y(ans: Codim1Ansatz, pts) -> np.ndarray:
    """Σ y_i at the points, from the same integration (values only)."""
    from .jets import space

    sp = space(pts.shape[1], 1)
    X = sp.variables(pts)
    g = ans.metric(sp, X)
    # principal curvatures y_i = −∂_t g_ii / (2 √|g00| g_ii)
    root = np.sqrt(np.abs(g[:, 0, 0, 0]))
    return sum(-g[:, i, i, 1] / (2 * root * g[:, i, i, 0]) for i in range(1, pts.shape[1]))


# structural checks --------------------------------------------------------


def _lower_block(stage, P):
    """Pᵀ g P, the metric restricted to the image of the projector P."""
    gP = stage.ein("ij,jk->ik", stage.g, P)
    return stage.ein("ji,jk->ik", P, gP)


def twisted_checks(geometry: Geometry, points) -> dict:
    """Umbilicity formulas and the three criticality conditions of a double-twisted product.

    Values are per-point residuals (max over points is taken by the caller):
    h = −(∇⊥f1) g̃, H = −n ∇⊥f1 and the dual formulas for 𝒟; T and T̃ norms;
    (i) the derivatives of f1 along the second factor; (ii) Δ̃ e^{(p/2) f2};
    (iii) the 𝒟-conformal defect of r_𝒟.
    """
    f1, f2 = geometry.twist
    n, p = geometry.n, geometry.p

    def fn(pair):
        st = pair.stage
        v = st.value
        g1, g2 = st.scalar(f1), st.scalar(f2)
        grad1, grad2 = st.gradient(g1), st.gradient(g2)
        perp1 = st.ein("ij,j->i", st.Pp, grad1)
        top2 = st.ein("ij,j->i", st.Pt, grad2)
        gt_low, gp_low = _lower_block(st, st.Pt), _lower_block(st, st.Pp)
        h_want = -st.ein("k,ij->kij", perp1, gt_low)
        ht_want = -st.ein("k,ij->kij", top2, gp_low)
        u = st.sp.apply("exp", 0.5 * p * g2)
        lap = st.partial_div_vector(st.ein("ij,j->i", st.Pt, st.gradient(u)), st.Pt)
        r = pair.dt.r
        conf = r - st.ein(",ij->ij", pair.S_mix / p, gp_low)
        dcoord = np.moveaxis(st.sp.grad(g1), -2, 1)
        return {
            "h": residual(v(pair.dt.h), v(h_want)),
            "H": residual(v(pair.dt.H), v(-n * perp1)),
            "h_tilde": residual(v(pair.d.h), v(ht_want)),
            "H_tilde": residual(v(pair.d.H), v(-p * top2)),
            "T": np.abs(v(pair.dt.T)).reshape(len(st.points), -1).max(axis=1),
            "T_tilde": np.abs(v(pair.d.T)).reshape(len(st.points), -1).max(axis=1),
            "f1_along_second_factor": np.abs(v(dcoord)[:, n:]).max(axis=1),
            "leafwise_harmonic": np.abs(v(lap)),
            "r_conformal": residual(v(r), v(st.ein(",ij->ij", pair.S_mix / p, gp_low)), v(conf)),
        }

    return map_pairs(geometry, points, fn, order=2)


def twisted_conditions(geometry: Geometry, points, tol: float = 1e-9) -> dict:
    res = twisted_checks(geometry, points)
    return {
        "f1_independent_of_second_factor": bool(res["f1_along_second_factor"].max() < tol),
        "leafwise_harmonic": bool(res["leafwise_harmonic"].max() < tol),
        "r_conformal": bool(res["r_conformal"].max() < tol),
    }


def conformal_submersion_checks(geometry: Geometry, points, lam: float | None = None) -> dict:
    """h̃ = −(∇⊤f) g⊥, H̃ = −p ∇⊤f, the mixed scalar curvature formula, and Δ̃ e^{λf}."""
    f = geometry.dilation
    n, p = geometry.n, geometry.p
    lam = harmonic_exponent(n, p) if lam is None else lam

    def fn(pair):
        st = pair.stage
        v = st.value
        fj = st.scalar(f)
        top = st.ein("ij,j->i", st.Pt, st.gradient(fj))
        tlap = st.partial_div_vector(top, st.Pt)
        gp_low = _lower_block(st, st.Pp)
        top_sq = st.ein("i,i->", top, st.ein("ij,j->i", st.g, top))
        terms = [-p * tlap, -p * top_sq, pair.d.TT, pair.dt.divH, (n - 1) / n * pair.dt.HH]
        e = st.sp.apply("exp", lam * fj)
        elap = st.partial_div_vector(st.ein("ij,j->i", st.Pt, st.gradient(e)), st.Pt)
        return {
            "h_tilde": residual(v(pair.d.h), v(-st.ein("k,ij->kij", top, gp_low))),
            "H_tilde": residual(v(pair.d.H), v(-p * top)),
            "S_mix": residual(v(pair.S_mix), v(sum(terms)), *[v(t) for t in terms]),
            "fiber_harmonic": np.abs(v(elap)),
        }

    return map_pairs(geometry, points, fn, order=2)


def isoparametric_check(geometry: Geometry, f, points, tol: float = 1e-9) -> dict:
    """Leafwise derivatives of |∇f|² and Δf for a codimension-one foliation by level sets of f.

    Also compares the outcome with "Riemannian foliation and τ₁ constant on leaves".
    """
    if geometry.p != 1:
        raise NotCodimOne(f"complement has rank {geometry.p}, expected 1")
    f = exprlang.as_expr(f)

    def fn(pair):
        st = pair.stage
        fj = st.scalar(f)
        grad = st.gradient(fj)
        sq = st.ein("i,i->", grad, st.ein("ij,j->i", st.g, grad))
        lap = st.laplacian(fj)
        c1 = Codim1Data(pair)

        def along_leaves(u):
            du = np.moveaxis(st.sp.grad(u), -2, 1)
            return np.abs(st.value(st.ein("ik,i->k", st.Pt, du))).max(axis=1)

        return {
            "grad_norm": along_leaves(sq),
            "laplacian": along_leaves(lap),
            "level_set_defect": np.abs(st.value(st.ein("ij,j->i", st.Pt, grad))).max(axis=1),
            "H_tilde": np.abs(st.value(c1.H_line)).max(axis=1),
            "tau1_along_leaves": along_leaves(c1.tau1),
        }

    res = map_pairs(geometry, points, fn, order=3)
    iso = bool(res["grad_norm"].max() < tol and res["laplacian"].max() < tol)
    riem = bool(res["H_tilde"].max() < tol and res["tau1_along_leaves"].max() < tol)
    return {
        "grad_norm": float(res["grad_norm"].max()),
        "laplacian": float(res["laplacian"].max()),
        "level_set_defect": float(res["level_set_defect"].max()),
        "isoparametric": iso,
        "riemannian_tau_constant": riem,
        "equivalence_holds": iso == riem,
    }


# codimension-one critical constructions -----------------------------------


def _codim1_exp_metric(a: float, c: float):
    root = "exp(a*x1/2)"
    leaf = f"exp(-c*{root}*x0)"
    g00 = "exp(a*x1)"
    return _diag([g00, leaf, leaf])


def codim1_critical(C: float = -1.0, box=None, bracket=(1e-3, 1.0)) -> Geometry:
    """The n = 2 Riemannian metric with constant principal curvatures y1 = y2 = ½|C|^{1/2}.

    g00 = e^{a x1}, g11 = g22 = exp(−|C|^{1/2} √|g00| x0).  Then τ₁ ≡ |C|^{1/2}
    solves N(τ₁) − τ₁² = C, and the leaf equation holds pointwise; the
    normal-curve bending a is tuned by root finding so that the mean of
    Ric_N over the default domain equals −(3/2)|C|, the remaining criticality
    condition.
    """
    from .variation import make_domain, mean_value

    if C >= 0:
        raise InitialValueOutOfRange("the construction needs C < 0")
    c = math.sqrt(-C)
    box = [[-0.5, 0.5], [-1.0, 1.0], [-1.0, 1.0]] if box is None else box
    flags = {"dtilde": ["integrable", "umbilical"], "biregular": True, "critical": ["codim1-perp", "codim1-tangent"],
             "volume_preserving": True}

    def build(a):
        return make_geometry(
            "codim1_critical", 2, 1, box, _codim1_exp_metric(a, c), [["0", "1", "0"], ["0", "0", "1"]],
            params={"a": a, "c": c}, flags=flags,
        )

    def ric_mean(a):
        geo = build(a)
        return mean_value(geo, make_domain(geo), lambda pair: Codim1Data(pair, normal_axis=0).Ric_N)

    target = -1.5 * c * c
    lo, hi = bracket
    f_lo = ric_mean(lo) - target
    for _ in range(6):
        if f_lo * (ric_mean(hi) - target) <= 0:
            break
        hi *= 1.5
    else:
        raise InconsistentCurvatures("no bending parameter reaches the mean Ricci curvature −(3/2)|C| in the bracket")
    a = brentq(lambda s: ric_mean(s) - target, lo, hi, xtol=1e-14, rtol=1e-14)
    geo = build(a)
    geo.notes = f"C = {C!r}, y1 = y2 = {0.5 * c!r}, a = {a!r}"
    geo.codim1_constant = float(C)
    return geo


@dataclass
class PoissonConstruction:
    """g00 = w T(t), g11 = g22 = exp(−|C|^{1/2} √w ∫₀^t √T) with w from the substitution chain.

    For this metric div H̃ = −Δ(√w) / (√w g11) at every t, so the equation
    div H̃ = Z becomes Δw + f|∇w|² = −2 w g11 Z with f(w) = −1/(2w).  The
    substitution u = ∫ e^{∫f} dw = 2√w linearizes it; w = (u/2)² with
    u = offset + u₀ + ½Z₀|x|².  Only Z₀ = 0 yields a constant div H̃.
    """

    T: exprlang.Expr
    u0: exprlang.Expr
    Z0: float
    C: float
    offset: float = 2.0

    def w(self, sp, X):
        coords = [Jet(X[..., v, :], sp) for v in range(X.shape[-2])]
        lift = lambda v: v if isinstance(v, Jet) else Jet(sp.constant(v, X.shape[:-2]), sp)
        x1, x2 = coords[1], coords[2]
        u = lift(exprlang.evaluate(self.u0, coords, {})) + (x1 * x1 + x2 * x2) * (0.5 * self.Z0) + self.offset
        if np.any(u.c[..., 0] <= 0):
            raise SubstitutionDomainError("u ≤ 0 encountered, so w = (u/2)² degenerates")
        half = u * 0.5
        return half * half, coords, lift

    def metric(self, sp, X):
        w, coords, lift = self.w(sp, X)
        t = coords[0]
        T = lift(exprlang.evaluate(self.T, coords, {}))
        S = _integral_sqrt_T(self.T, coords, lift)
        leaf = (w ** 0.5 * S * -math.sqrt(-self.C)).exp()
        g = np.zeros(X.shape[:-2] + (3, 3, sp.ncoef))
        g[..., 0, 0, :] = (w * T).c
        g[..., 1, 1, :] = leaf.c
        g[..., 2, 2, :] = leaf.c
        return g


def _integral_sqrt_T(T, coords, lift, nodes: int = 24):
    """∫₀^t √T(s) ds by Gauss–Legendre on [0, t], exact in jets of t."""
    xs, ws = np.polynomial.legendre.leggauss(nodes)
    t = coords[0]
    acc = lift(0.0)
    for x, wt in zip(xs, ws):
        s = t * (0.5 * (x + 1.0))
        val = lift(exprlang.evaluate(T, [s] + coords[1:], {}))
        acc = acc + val ** 0.5 * (0.5 * wt)
    return acc * t


def poisson_construction(T="1", u0="x1", Z0: float = 0.0, C: float = -1.0, offset: float = 2.0, box=None,
                         grid: int = 5) -> Geometry:
    """Codimension-one metric assembled through the Poisson substitution; reports div H̃ − Z₀.

    `notes` and the attribute `z0_residual` carry the max residual over an
    interior grid, both on the slice t = 0 and on the whole box.
    """
    if C >= 0:
        raise InitialValueOutOfRange("the construction needs C < 0")
    box = [[-0.5, 0.5], [-1.0, 1.0], [-1.0, 1.0]] if box is None else box
    u0e = exprlang.as_expr(_src(u0))
    lap_u0 = _harmonic_defect(u0e, box)
    if lap_u0 > 1e-8:
        raise SubstitutionDomainError(f"u0 is not harmonic (|Δu0| up to {lap_u0:.2e})")
    ans = PoissonConstruction(exprlang.as_expr(_src(T)), u0e, float(Z0), float(C), offset)
    geo = make_geometry("poisson_construction", 2, 1, box, _diag(["1", "1", "1"]), [["0", "1", "0"], ["0", "0", "1"]],
                        flags={"dtilde": ["integrable", "umbilical"], "biregular": True})
    geo.metric_provider = ans.metric
    geo.poisson = ans
    geo.z0_residual = poisson_residual(geo, grid)
    geo.notes = f"max |div H̃ − Z0|: slice t=0 {geo.z0_residual['slice']:.2e}, box {geo.z0_residual['box']:.2e}"
    return geo


def _harmonic_defect(u, box, count: int = 32) -> float:
    from .jets import space

    pts = np.asarray(box, dtype=float)
    pts = pts[:, 0] + (pts[:, 1] - pts[:, 0]) * np.random.default_rng(3).random((count, len(box)))
    sp = space(len(box), 2)
    X = sp.variables(pts)
    coords = [Jet(X[..., v, :], sp) for v in range(len(box))]
    val = exprlang.evaluate(u, coords, {})
    if not isinstance(val, Jet):
        return 0.0
    lap = sum(sp.coefficient(val.c, tuple(2 if w == v else 0 for w in range(len(box)))) for v in range(1, len(box)))
    return float(np.max(np.abs(lap)))


def poisson_residual(geometry: Geometry, grid: int = 5, margin: float = 0.1) -> dict:
    """max |div H̃ − Z₀| on a grid of the slice t = 0 and of the whole interior box."""
    ans = geometry.poisson
    box = geometry.interior_box(margin)
    axes = [np.linspace(lo, hi, grid) for lo, hi in box]
    full = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    slab = full.copy()
    slab[:, 0] = 0.0
    fn = lambda pair: np.abs(pair.stage.value(Codim1Data(pair, normal_axis=0).div_H_line) - ans.Z0)
    return {
        "slice": float(map_pairs(geometry, slab, fn, order=2).max()),
        "box": float(map_pairs(geometry, full, fn, order=2).max()),
        "grid": grid,
    }


# registry -----------------------------------------------------------------


BUILTINS = {
    "flat_product": flat_product,
    "sphere_theta_foliation": sphere_theta_foliation,
    "warped_line": warped_line,
    "heisenberg_flow": heisenberg_flow,
    "lorentz_product": lorentz_product,
    "double_twisted": double_twisted,
    "codim1_biregular": codim1_biregular,
    "conformal_submersion": conformal_submersion,
}

CONSTRUCTIONS = {
    "twisted_critical": twisted_critical,
    "conformal_harmonic": conformal_harmonic,
    "codim1_critical": codim1_critical,
    "poisson_construction": poisson_construction,
}

CATALOG = {**BUILTINS, **CONSTRUCTIONS}


def builtin_geometries() -> list[tuple[str, Geometry]]:
    """The eight plain builtins, in a fixed order."""
    return [(name, fn()) for name, fn in BUILTINS.items()]


def get(name: str, **params) -> Geometry:
    if name not in CATALOG:
        raise KeyError(name)
    return CATALOG[name](**params)
