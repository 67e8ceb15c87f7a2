"""Residuals of the structural identities that hold for every adapted metric.

Each check maps a PairData to per-point residuals; `run_identities` samples
points, applies every check that fits the geometry and reduces to one row per
check.  `perturbation` builds an adapted random perturbation g + δB so the
same suite can confirm the identities are metric-generic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calculus import Stage
from .chart import Geometry
from .errors import NotBiregular
from .extrinsic import Codim1Data, PairData
from .sampling import map_pairs, residual, sample_points

TOL = 1e-8
STRUCTURE_TOL = 1e-10


def _res(pair, lhs, rhs, *terms):
    v = pair.stage.value
    return residual(v(lhs), v(rhs), *[v(t) for t in terms])


def _norm(pair, a):
    v = pair.stage.value(a)
    return np.abs(v).reshape(len(v), -1).max(axis=1)


# partial Ricci identities -----------------------------------------------


def partial_ricci_fields(pair: PairData) -> dict:
    """r_𝒟 and d_𝒟H identities for 𝒟, their duals for 𝒟̃, and d_ℱH̃ = 0 when 𝒟̃ is integrable."""
    out = {}
    for which, suffix in (("D", ""), ("Dtilde", "_dual")):
        lhs, rhs, terms = pair.genric_residual(which)
        out["partial_ricci" + suffix] = _res(pair, lhs, rhs, *terms.values())
        own = pair.dt if which == "D" else pair.d
        dterms = pair.dH_terms(which)
        out["d_H" + suffix] = _res(pair, own.d_H, sum(dterms.values()), *dterms.values())
    if _norm(pair, pair.dt.T).max() < STRUCTURE_TOL:
        out["d_F_H_tilde"] = _norm(pair, pair.d.d_H)
    return out


def smix_decomposition_fields(pair: PairData) -> dict:
    """S_mix = S_ex + S̃_ex + ⟨T,T⟩ + ⟨T̃,T̃⟩ + div(H + H̃)."""
    dt, d = pair.dt, pair.d
    terms = [dt.S_ex, d.S_ex, dt.TT, d.TT, dt.divH, d.divH]
    return {"smix_decomposition": _res(pair, pair.S_mix, sum(terms), *terms)}


def trace_fields(pair: PairData) -> dict:
    """The seven trace identities, for 𝒟̃ and (suffix _dual) for 𝒟."""
    out = {}
    for dd, suffix in ((pair.dt, ""), (pair.d, "_dual")):
        tr = lambda S: np.einsum("...aaz->...z", S)
        rows = {
            "trace_Psi": (dd.trace_g(dd.Psi), dd.hh - dd.TT),
            "trace_casorati": (tr(dd.casorati), dd.hh),
            "trace_tcasorati": (tr(dd.tcasorati), -dd.TT),
            "trace_Phi_h": (dd.trace_g(dd.Phi_h), dd.S_ex),
            "trace_Phi_T": (dd.trace_g(dd.Phi_T), -dd.TT),
            "trace_div_h": (dd.trace_g(dd.div_h), dd.divH),
            "trace_Def_H": (dd.trace_g(dd.Def_H), dd.divH + dd.HH),
        }
        for name, (lhs, rhs) in rows.items():
            out[name + suffix] = _res(pair, lhs, rhs)
    return out


# codimension one --------------------------------------------------------


def _eps(c1: Codim1Data):
    return c1.eps.reshape(-1, 1, 1, 1)


def _flat_sq(c1: Codim1Data, M):
    st = c1.stage
    return c1._on_leaf(c1.leaf.flat(st.sp.matmul(M, M)))


def _HH(c1: Codim1Data):
    st = c1.stage
    Hl = st.ein("ij,j->i", st.g, c1.H_line)
    return c1._on_leaf(st.ein("i,j->ij", Hl, Hl))


def codim1_fields(pair: PairData) -> dict:
    """Riccati-type identities along the unit normal N of a codimension-one foliation (p = 1).

    ε_N (R_N + A_N²)♭ = ∇_N h_sc − H̃♭⊗H̃♭ + Def_ℱ H̃ on the leaves, and its trace
    Ric_N = N(τ₁) − τ₂ + div(∇_N N).
    """
    c1 = Codim1Data(pair)
    st = pair.stage
    RN = c1._on_leaf(st.ein("xd,dy->xy", c1.R_N, st.g))
    lhs = _eps(c1) * (RN + _flat_sq(c1, c1.A_N))
    terms = [c1.nabla_N_hsc, -_HH(c1), pair.d.Def_H]
    eps = c1.eps[:, None]
    sc = [c1.N_tau1, -c1.tau2, eps * c1.div_H_line]
    return {
        "codim1_riccati": _res(pair, lhs, sum(terms), *terms),
        "codim1_ric_N": _res(pair, c1.Ric_N, sum(sc), *sc),
    }


def flow_fields(pair: PairData) -> dict:
    """The same identities for a unit vector field N spanning 𝒟̃ (n = 1), where T̃ may be nonzero.

    ε_N (R_N + Ã_N² + (T̃♯_N)²)♭ = ∇_N h̃_sc − H♭⊗H♭ + Def_𝒟 H and its trace
    ε_N Ric_N = div(ε_N ∇_N N) + ε_N (N(τ̃₁) − τ̃₂) + ⟨T̃, T̃⟩.
    """
    c1 = Codim1Data(pair, swap=True)
    st = pair.stage
    RN = c1._on_leaf(st.ein("xd,dy->xy", c1.R_N, st.g))
    TN = st.ein("l,lab->ab", c1.N, c1.leaf.Tsh)
    lhs = _eps(c1) * (RN + _flat_sq(c1, c1.A_N) + _flat_sq(c1, TN))
    terms = [c1.nabla_N_hsc, -_HH(c1), pair.dt.Def_H]
    eps = c1.eps[:, None]
    sc = [c1.div_H_line, eps * (c1.N_tau1 - c1.tau2), pair.d.TT]
    return {
        "flow_riccati": _res(pair, lhs, sum(terms), *terms),
        "flow_ric_N": _res(pair, eps * c1.Ric_N, sum(sc), *sc),
    }


def biregular_fields(pair: PairData) -> dict:
    """Coordinate formulas for N, h, A_N, τ₁, τ₂ and div H̃ in orthogonal biregular coordinates.

    Coordinate 0 is normal to the leaves; the metric must be diagonal.
    """
    st = pair.stage
    sp = st.sp
    g = st.g
    m = st.m
    g0 = st.value(g)
    off = g0 - np.einsum("...ii->...i", g0)[..., None] * np.eye(m)
    if np.max(np.abs(off)) > 1e-12:
        raise NotBiregular(f"metric has off-diagonal terms up to {np.max(np.abs(off)):.1e}")
    c1 = Codim1Data(pair, normal_axis=0)
    v = st.value
    eps_N = np.sign(g0[:, 0, 0])
    root = np.sqrt(np.abs(g0[:, 0, 0]))
    N_want = np.zeros((len(g0), m))
    N_want[:, 0] = 1.0 / root
    gd = np.stack([v(sp.deriv(g[:, i, i], 0)) for i in range(m)], axis=1)
    gi = np.einsum("...ii->...i", g0)
    ratio = gd[:, 1:] / gi[:, 1:]
    A_want = np.zeros((len(g0), m, m))
    h_want = np.zeros((len(g0), m, m))
    for i in range(1, m):
        A_want[:, i, i] = -ratio[:, i - 1] / (2 * root)
        h_want[:, i, i] = -0.5 * eps_N * gd[:, i] / root
    tau1 = -ratio.sum(axis=1) / (2 * root)
    tau2 = (ratio**2).sum(axis=1) / (4 * np.abs(g0[:, 0, 0]))
    from .extrinsic import _divNN_biregular

    div_b = np.array([_divNN_biregular(PairData(Stage(st.geometry, st.points[k : k + 1], 2)))[1] for k in range(len(g0))])
    return {
        "biregular_N": residual(v(c1.N), N_want),
        "biregular_h": residual(v(c1.h_sc), h_want),
        "biregular_A": residual(v(c1.A_N), A_want),
        "biregular_tau1": residual(v(c1.tau1), tau1),
        "biregular_tau2": residual(v(c1.tau2), tau2),
        "biregular_div_H_tilde": residual(v(c1.div_H_line), div_b),
    }


# suite --------------------------------------------------------------------


@dataclass(frozen=True)
class IdentityResult:
    check_name: str
    n_points: int
    max_residual: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_residual < self.tol)

    def to_json(self) -> dict:
        return {"check_name": self.check_name, "n_points": self.n_points, "max_residual": self.max_residual, "tol": self.tol, "pass": self.passed}


def applicable(geometry: Geometry) -> list[str]:
    """Names of the field groups that apply to the geometry."""
    groups = ["partial_ricci", "smix", "traces"]
    if geometry.p == 1 and "integrable" in geometry.flags.get("dtilde", []):
        groups.append("codim1")
    if geometry.n == 1:
        groups.append("flow")
    if geometry.p == 1 and geometry.flags.get("biregular"):
        groups.append("biregular")
    return groups


_GROUPS = {
    "partial_ricci": (partial_ricci_fields, 2),
    "smix": (smix_decomposition_fields, 2),
    "traces": (trace_fields, 2),
    "codim1": (codim1_fields, 3),
    "flow": (flow_fields, 3),
    "biregular": (biregular_fields, 2),
}


def identity_fields(geometry: Geometry, points, groups=None, metric_fn=None) -> dict:
    """Per-point residual arrays of every check in the selected groups."""
    groups = applicable(geometry) if groups is None else groups
    by_order: dict[int, list] = {}
    for name in groups:
        fn, order = _GROUPS[name]
        by_order.setdefault(order, []).append(fn)
    out = {}
    for order, fns in sorted(by_order.items()):
        out.update(map_pairs(geometry, points, lambda pair: {k: val for f in fns for k, val in f(pair).items()}, order, metric_fn))
    return out


def run_identities(geometry: Geometry, points: int = 200, seed: int = 0, tol: float = TOL, groups=None, metric_fn=None) -> list[IdentityResult]:
    pts = sample_points(geometry, points, seed=seed)
    fields = identity_fields(geometry, pts, groups, metric_fn)
    return [IdentityResult(k, len(pts), float(np.max(v)), tol) for k, v in fields.items()]


def perturbation(geometry: Geometry, delta: float = 0.05, seed: int = 0):
    """metric_fn giving g + δB with B adapted (block-diagonal for the splitting) and |B| ≤ 1 entrywise on each block profile."""
    rng = np.random.default_rng(seed)
    m = geometry.dim
    lo, hi = geometry.chart.lower, geometry.chart.upper
    from . import exprlang

    def profile():
        rows = [[None] * m for _ in range(m)]
        for i in range(m):
            for j in range(i, m):
                a, b, ph = (float(x) for x in rng.uniform([-0.5, -0.5, 0.0], [0.5, 0.5, 6.0]))
                k = int(rng.integers(0, m))
                w = float(2 * np.pi / (hi[k] - lo[k]))
                rows[i][j] = rows[j][i] = exprlang.parse(f"{a!r} + {b!r}*sin({w!r}*x{k} + {ph!r})", ncoords=m)
        return rows

    prof_t, prof_p = profile(), profile()

    def block(stage: Stage, P, prof):
        M = np.stack([np.stack([stage.scalar(e) for e in row], axis=1) for row in prof], axis=1)
        return stage.ein("ai,aj->ij", P, stage.ein("ab,bj->aj", M, P))

    def metric_fn(base: Stage) -> np.ndarray:
        return base.g + delta * (block(base, base.Pt, prof_t) + block(base, base.Pp, prof_p))

    return metric_fn


def perturbed_identities(geometry: Geometry, points: int = 200, seed: int = 0, delta: float = 0.05, tol: float = TOL) -> list[IdentityResult]:
    """The suite on g + δB (biregular coordinate formulas excluded since B is not diagonal)."""
    groups = [gname for gname in applicable(geometry) if gname != "biregular"]
    metric_fn = perturbation(geometry, delta, seed)
    pts = sample_points(geometry, points, seed=seed)
    values = map_pairs(geometry, pts, lambda pair: pair.stage.value(pair.stage.g), 0, metric_fn)
    check_signature_values(geometry, values)
    fields = identity_fields(geometry, pts, groups, metric_fn)
    return [IdentityResult(k + "_perturbed", len(pts), float(np.max(v)), tol) for k, v in fields.items()]


def check_signature_values(geometry: Geometry, G: np.ndarray) -> None:
    """Raise SignatureMismatch unless every metric value has the declared number of negative eigenvalues."""
    from .errors import SignatureMismatch

    neg = (np.linalg.eigvalsh(G) < 0).sum(axis=-1)
    if np.any(neg != geometry.metric.q):
        raise SignatureMismatch(f"perturbed metric changed signature (expected {geometry.metric.q} negative directions)")


# point-wise API -----------------------------------------------------------


def _at(geometry: Geometry, x, fn, order: int):
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    return {k: float(np.max(v)) for k, v in map_pairs(geometry, pts, fn, order).items()}


def check_partial_ricci(geometry: Geometry, x) -> dict:
    return _at(geometry, x, partial_ricci_fields, 2)


def check_smix_decomposition(geometry: Geometry, x) -> float:
    return _at(geometry, x, smix_decomposition_fields, 2)["smix_decomposition"]


def check_codim1_identities(geometry: Geometry, x) -> dict:
    out = _at(geometry, x, codim1_fields, 3)
    out.update(_at(geometry, x, biregular_fields, 2))
    return out
