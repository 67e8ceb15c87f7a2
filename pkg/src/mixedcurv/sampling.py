"""Point sampling, chunked evaluation and the scale-free residual used by every check."""

from __future__ import annotations

import numpy as np
from scipy.stats import qmc

from .calculus import Stage
from .extrinsic import PairData

CHUNK = 2048


def sample_points(geometry, count: int, seed: int = 0, box=None, margin: float = 0.05) -> np.ndarray:
    """Scrambled Halton points inside `box` (default: the chart box shrunk by `margin`)."""
    box = geometry.interior_box(margin) if box is None else np.asarray(box, dtype=float)
    sampler = qmc.Halton(d=geometry.dim, scramble=True, seed=seed)
    return qmc.scale(sampler.random(count), box[:, 0], box[:, 1])


def map_pairs(geometry, points, fn, order: int = 2, metric_fn=None, chunk: int = CHUNK):
    """Apply fn(pair) on chunks of points and stitch the outputs back together.

    fn returns an array or a dict of arrays with the point axis first.
    metric_fn(stage_sp, X) may supply the metric jets for each chunk.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    parts = []
    for lo in range(0, len(points), chunk):
        pts = points[lo : lo + chunk]
        metric = None
        if metric_fn is not None:
            base = Stage(geometry, pts, order)
            metric = metric_fn(base)
        parts.append(fn(PairData(Stage(geometry, pts, order, metric=metric))))
    if isinstance(parts[0], dict):
        return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    return np.concatenate(parts)


def _norms(a, n: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return np.full(n, abs(float(a)))
    a = a.reshape(n, -1)
    return np.abs(a).max(axis=1) if a.shape[1] else np.zeros(n)


def residual(lhs, rhs, *terms) -> np.ndarray:
    """Per-point max|lhs − rhs| / (1 + largest |term|), over all tensor slots.

    Arrays carry the point axis first; lhs and rhs count as terms.
    """
    lhs = np.asarray(lhs, dtype=float)
    n = lhs.shape[0]
    diff = _norms(lhs - np.asarray(rhs, dtype=float), n)
    scale = np.zeros(n)
    for t in (lhs, rhs) + terms:
        scale = np.maximum(scale, _norms(t, n))
    return diff / (1.0 + scale)
