"""Coordinate charts carrying a metric and a distribution 𝒟̃ with its complement 𝒟."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg

from . import exprlang
from .errors import (
    ConfigError,
    DegenerateDistribution,
    ExprError,
    GramSchmidtBreakdown,
    SignatureMismatch,
)
from .jets import Jet, JetSpace

PIVOT_THRESHOLD = 1e-12
CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class Chart:
    n: int
    p: int
    box: tuple[tuple[float, float], ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ConfigError("/n", "both ranks n and p must be at least 1")
        if len(self.box) != self.n + self.p:
            raise ConfigError("/box", f"expected {self.n + self.p} intervals, got {len(self.box)}")
        for k, (lo, hi) in enumerate(self.box):
            if not hi > lo:
                raise ConfigError(f"/box/{k}", "interval is degenerate")
        if not self.names:
            object.__setattr__(self, "names", tuple(f"x{k}" for k in range(self.dim)))

    @property
    def dim(self) -> int:
        return self.n + self.p

    @property
    def lower(self) -> np.ndarray:
        return np.array([b[0] for b in self.box])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b[1] for b in self.box])


def _evaluate_grid(entries, X, sp, params):
    """Evaluate a nested list of Exprs on coordinate jets X (*batch, m, ncoef)."""
    coords = [Jet(X[..., v, :], sp) for v in range(X.shape[-2])]
    batch = X.shape[:-2]

    def one(e):
        val = exprlang.evaluate(e, coords, params)
        if isinstance(val, Jet):
            return val.c
        return sp.constant(val, batch)

    return one


@dataclass(frozen=True)
class MetricField:
    entries: tuple[tuple[exprlang.Expr, ...], ...]
    q: int = 0

    def __post_init__(self):
        m = len(self.entries)
        for i in range(m):
            if len(self.entries[i]) != m:
                raise ConfigError(f"/metric/{i}", "metric must be square")
            for j in range(i):
                if self.entries[i][j] != self.entries[j][i]:
                    raise ConfigError(f"/metric/{i}/{j}", "metric must be symmetric")

    @property
    def dim(self) -> int:
        return len(self.entries)

    def jets(self, sp: JetSpace, X: np.ndarray, params) -> np.ndarray:
        m = self.dim
        one = _evaluate_grid(self.entries, X, sp, params)
        out = np.zeros(X.shape[:-2] + (m, m, sp.ncoef))
        for i in range(m):
            for j in range(i, m):
                out[..., i, j, :] = one(self.entries[i][j])
                out[..., j, i, :] = out[..., i, j, :]
        return out

    def values(self, points: np.ndarray, params) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        coords = [points[:, v] for v in range(points.shape[1])]
        m = self.dim
        out = np.zeros((points.shape[0], m, m))
        for i in range(m):
            for j in range(i, m):
                out[:, i, j] = exprlang.evaluate(self.entries[i][j], coords, params)
                out[:, j, i] = out[:, i, j]
        return out


@dataclass(frozen=True)
class SplittingField:
    """n vector fields spanning 𝒟̃, each a tuple of m component Exprs."""

    vectors: tuple[tuple[exprlang.Expr, ...], ...]

    @property
    def rank(self) -> int:
        return len(self.vectors)

    def jets(self, sp: JetSpace, X: np.ndarray, params) -> np.ndarray:
        one = _evaluate_grid(self.vectors, X, sp, params)
        n, m = len(self.vectors), len(self.vectors[0])
        out = np.zeros(X.shape[:-2] + (n, m, sp.ncoef))
        for a in range(n):
            for i in range(m):
                out[..., a, i, :] = one(self.vectors[a][i])
        return out

    def values(self, points: np.ndarray, params) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        coords = [points[:, v] for v in range(points.shape[1])]
        n, m = len(self.vectors), len(self.vectors[0])
        out = np.zeros((points.shape[0], n, m))
        for a in range(n):
            for i in range(m):
                out[:, a, i] = exprlang.evaluate(self.vectors[a][i], coords, params)
        return out


MetricProvider = Callable[[JetSpace, np.ndarray], np.ndarray]


@dataclass
class Geometry:
    """A chart with metric and splitting: the stage every computation runs on.

    `metric_provider` optionally replaces the Expr metric by a function
    returning metric jets directly (used for ODE-built metrics).
    """

    name: str
    chart: Chart
    metric: MetricField
    split: SplittingField
    params: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    metric_provider: MetricProvider | None = None
    notes: str = ""

    @property
    def n(self) -> int:
        return self.chart.n

    @property
    def p(self) -> int:
        return self.chart.p

    @property
    def dim(self) -> int:
        return self.chart.dim

    def metric_jets(self, sp: JetSpace, X: np.ndarray) -> np.ndarray:
        if self.metric_provider is not None:
            return self.metric_provider(sp, X)
        return self.metric.jets(sp, X, self.params)

    def frame_jets(self, sp: JetSpace, X: np.ndarray) -> np.ndarray:
        return self.split.jets(sp, X, self.params)

    def metric_at(self, points) -> np.ndarray:
        if self.metric_provider is not None:
            from .jets import space

            pts = np.atleast_2d(np.asarray(points, dtype=float))
            sp = space(self.dim, 0)
            return self.metric_provider(sp, sp.variables(pts))[..., 0]
        return self.metric.values(points, self.params)

    def frame_at(self, points) -> np.ndarray:
        return self.split.values(points, self.params)

    def interior_box(self, margin: float = 0.05) -> np.ndarray:
        lo, hi = self.chart.lower, self.chart.upper
        w = hi - lo
        return np.stack([lo + margin * w, hi - margin * w], axis=1)

    def to_json(self) -> dict:
        if self.metric_provider is not None:
            raise ConfigError("/metric", f"geometry {self.name!r} is built numerically and has no JSON form")
        return {
            "n": self.chart.n,
            "p": self.chart.p,
            "box": [list(b) for b in self.chart.box],
            "signature_q": self.metric.q,
            "metric": [[exprlang.to_source(e) for e in row] for row in self.metric.entries],
            "dtilde_frame": [[exprlang.to_source(e) for e in vec] for vec in self.split.vectors],
            "params": dict(self.params),
        }


CHART_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "chart",
    "type": "object",
    "required": ["n", "p", "box", "signature_q", "metric", "dtilde_frame"],
    "properties": {
        "n": {"type": "integer", "minimum": 1, "description": "rank of the distribution spanned by dtilde_frame"},
        "p": {"type": "integer", "minimum": 1, "description": "rank of its orthogonal complement"},
        "box": {
            "type": "array",
            "description": "coordinate intervals [lo, hi], one per coordinate x0..x{n+p-1}",
            "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        },
        "signature_q": {"type": "integer", "minimum": 0, "description": "number of negative metric eigenvalues"},
        "metric": {
            "type": "array",
            "description": "symmetric (n+p)x(n+p) matrix of expressions",
            "items": {"type": "array", "items": {"type": ["string", "number"]}},
        },
        "dtilde_frame": {
            "type": "array",
            "description": "n vector fields spanning the distribution, components as expressions",
            "items": {"type": "array", "items": {"type": ["string", "number"]}},
        },
        "params": {"type": "object", "additionalProperties": {"type": "number"}},
    },
    "additionalProperties": False,
}


def _parse_entry(value, pointer: str, params, m: int) -> exprlang.Expr:
    if isinstance(value, bool) or not isinstance(value, (str, int, float)):
        raise ConfigError(pointer, "expected an expression string or a number")
    if isinstance(value, (int, float)):
        return exprlang.Num(float(value))
    try:
        return exprlang.parse(value, params=list(params), ncoords=m)
    except ExprError as exc:
        raise ConfigError(pointer, str(exc)) from None


def geometry_from_json(data: Mapping, name: str = "custom", pointer: str = "") -> Geometry:
    """Build a Geometry from the chart JSON schema, reporting JSON pointers on error."""
    if not isinstance(data, Mapping):
        raise ConfigError(pointer or "/", "chart must be an object")
    for key in CHART_SCHEMA["required"]:
        if key not in data:
            raise ConfigError(f"{pointer}/{key}", "missing required key")
    for key in data:
        if key not in CHART_SCHEMA["properties"]:
            raise ConfigError(f"{pointer}/{key}", "unknown key")
    n, p = data["n"], data["p"]
    if not isinstance(n, int) or not isinstance(p, int):
        raise ConfigError(f"{pointer}/n", "n and p must be integers")
    m = n + p
    params = data.get("params", {}) or {}
    for k, v in params.items():
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError(f"{pointer}/params/{k}", "parameter values must be numbers")
    box = data["box"]
    if not isinstance(box, list) or any(not isinstance(b, list) or len(b) != 2 for b in box):
        raise ConfigError(f"{pointer}/box", "box must be a list of [lo, hi] pairs")
    chart_ = Chart(n, p, tuple((float(lo), float(hi)) for lo, hi in box))
    rows = data["metric"]
    if not isinstance(rows, list) or len(rows) != m:
        raise ConfigError(f"{pointer}/metric", f"expected {m} rows")
    entries = []
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != m:
            raise ConfigError(f"{pointer}/metric/{i}", f"expected {m} entries")
        entries.append(tuple(_parse_entry(v, f"{pointer}/metric/{i}/{j}", params, m) for j, v in enumerate(row)))
    try:
        metric = MetricField(tuple(entries), int(data["signature_q"]))
    except ConfigError as exc:
        raise ConfigError(pointer + exc.pointer, str(exc).split(": ", 1)[-1]) from None
    frame = data["dtilde_frame"]
    if not isinstance(frame, list) or len(frame) != n:
        raise ConfigError(f"{pointer}/dtilde_frame", f"expected {n} vectors")
    vectors = []
    for a, vec in enumerate(frame):
        if not isinstance(vec, list) or len(vec) != m:
            raise ConfigError(f"{pointer}/dtilde_frame/{a}", f"expected {m} components")
        vectors.append(tuple(_parse_entry(v, f"{pointer}/dtilde_frame/{a}/{i}", params, m) for i, v in enumerate(vec)))
    return Geometry(name, chart_, metric, SplittingField(tuple(vectors)), dict(params))


def make_geometry(
    name: str,
    n: int,
    p: int,
    box: Sequence[Sequence[float]],
    metric: Sequence[Sequence],
    dtilde_frame: Sequence[Sequence],
    q: int = 0,
    params: Mapping | None = None,
    flags: Mapping | None = None,
) -> Geometry:
    """Build a Geometry from source strings (or numbers) without a JSON round trip."""
    data = {
        "n": n,
        "p": p,
        "box": [list(b) for b in box],
        "signature_q": q,
        "metric": [list(r) for r in metric],
        "dtilde_frame": [list(v) for v in dtilde_frame],
        "params": dict(params or {}),
    }
    geo = geometry_from_json(data, name)
    geo.flags = dict(flags or {})
    return geo


def load_chart(text: str, name: str = "custom") -> Geometry:
    return geometry_from_json(json.loads(text), name)


# pointwise linear algebra -------------------------------------------------


def _inner(G, u, v):
    return float(u @ G @ v)


def dtilde_projector(G: np.ndarray, V: np.ndarray) -> np.ndarray:
    """g-orthogonal projector onto span of the rows of V (matrix acting on column vectors)."""
    gram = V @ G @ V.T
    if np.linalg.cond(gram) > CONDITION_LIMIT:
        raise DegenerateDistribution("metric restricted to the distribution is degenerate")
    return V.T @ np.linalg.solve(gram, V @ G)


def orthogonal_complement(geometry: Geometry, x) -> np.ndarray:
    """Basis (rows) of 𝒟 at x: projected coordinate vectors picked by pivoted QR."""
    x = np.asarray(x, dtype=float)
    G = geometry.metric_at(x)[0]
    V = geometry.frame_at(x)[0]
    if np.linalg.matrix_rank(V, tol=1e-10) < V.shape[0]:
        raise DegenerateDistribution("frame vectors are linearly dependent")
    P = dtilde_projector(G, V)
    Q = np.eye(len(G)) - P
    _, _, piv = scipy.linalg.qr(Q, pivoting=True)
    cols = sorted(piv[: geometry.p])
    W = Q[:, cols].T
    gram = W @ G @ W.T
    if np.linalg.cond(gram) > CONDITION_LIMIT:
        raise DegenerateDistribution("metric restricted to the complement is degenerate")
    return W


def gram_schmidt(G: np.ndarray, vectors: np.ndarray):
    """Pseudo-orthonormalise rows of `vectors`, pivoting on the largest |g(v,v)|."""
    remaining = [np.array(v, dtype=float) for v in vectors]
    basis, signs = [], []
    while remaining:
        projected = []
        for v in remaining:
            w = v.copy()
            for e, s in zip(basis, signs):
                w = w - s * _inner(G, v, e) * e
            projected.append(w)
        norms = [abs(_inner(G, w, w)) for w in projected]
        k = int(np.argmax(norms))
        if norms[k] < PIVOT_THRESHOLD:
            raise GramSchmidtBreakdown(f"isotropic pivot |g(v,v)| = {norms[k]:.3e}")
        w = projected[k]
        gw = _inner(G, w, w)
        basis.append(w / np.sqrt(abs(gw)))
        signs.append(1.0 if gw > 0 else -1.0)
        remaining = [projected[j] for j in range(len(projected)) if j != k]
    return np.array(basis), np.array(signs)


@dataclass(frozen=True)
class AdaptedFrame:
    E: np.ndarray  # (n, m) rows span 𝒟̃
    F: np.ndarray  # (p, m) rows span 𝒟
    eps_t: np.ndarray
    eps_p: np.ndarray

    @property
    def vectors(self) -> np.ndarray:
        return np.vstack([self.E, self.F])

    @property
    def signs(self) -> np.ndarray:
        return np.concatenate([self.eps_t, self.eps_p])


def adapted_frame(geometry: Geometry, x) -> AdaptedFrame:
    """Pointwise pseudo-orthonormal frame {E_a} of 𝒟̃ followed by {𝓔_i} of 𝒟."""
    x = np.asarray(x, dtype=float)
    G = geometry.metric_at(x)[0]
    V = geometry.frame_at(x)[0]
    W = orthogonal_complement(geometry, x)
    E, et = gram_schmidt(G, V)
    F, ep = gram_schmidt(G, W)
    negatives = int(np.sum(et < 0) + np.sum(ep < 0))
    if negatives != geometry.metric.q:
        raise SignatureMismatch(f"frame has {negatives} negative signs, metric declares {geometry.metric.q}")
    return AdaptedFrame(E, F, et, ep)


def check_signature(geometry: Geometry, points: np.ndarray) -> None:
    """Raise SignatureMismatch unless every point has the declared index."""
    for G in geometry.metric_at(points):
        ev = np.linalg.eigvalsh(G)
        if np.min(np.abs(ev)) < PIVOT_THRESHOLD:
            raise SignatureMismatch("metric is degenerate at a sample point")
        if int(np.sum(ev < 0)) != geometry.metric.q:
            raise SignatureMismatch(f"metric index {int(np.sum(ev < 0))} differs from declared {geometry.metric.q}")
