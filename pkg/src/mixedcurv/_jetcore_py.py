"""Pure numpy jet kernels; the fallback when the compiled core is missing."""

import numpy as np


def jet_mul(a, b, pi, pj, pk):
    """Truncated product of jet rows: a, b of shape (N, ncoef)."""
    out = np.zeros_like(a)
    prod = a[:, pi] * b[:, pj]
    starts = np.flatnonzero(np.r_[True, pk[1:] != pk[:-1]])
    out[:, pk[starts]] = np.add.reduceat(prod, starts, axis=1)
    return out


def jet_matmul(a, b, pi, pj, pk):
    """Jet matrix product: a (N, r, s, ncoef) times b (N, s, t, ncoef)."""
    prod = np.matmul(np.moveaxis(a[..., pi], -1, 1), np.moveaxis(b[..., pj], -1, 1))
    prod = np.moveaxis(prod, 1, -1)
    starts = np.flatnonzero(np.r_[True, pk[1:] != pk[:-1]])
    out = np.zeros(prod.shape[:-1] + (a.shape[-1],))
    out[..., pk[starts]] = np.add.reduceat(prod, starts, axis=-1)
    return out
