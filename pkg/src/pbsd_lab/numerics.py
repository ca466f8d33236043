"""Small numerically-stable primitives used throughout the package.

Everything here works on scalars or numpy arrays and avoids overflow for
arguments up to a few hundred in magnitude.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    """Logistic function, branch-wise stable for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def softplus(x):
    """log(1 + exp(x)) without overflow; equals x + softplus(-x) for x > 0."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 0.0))))
    if out.ndim == 0:
        return float(out)
    return out


def sigmoid_product(x):
    """sigma(x) * sigma(-x), computed so the result stays positive for |x|
    far beyond the point where 1 - sigma(x) underflows to zero."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    small = np.exp(-ax) / (1.0 + np.exp(-ax))  # sigma(-|x|), always positive
    big = 1.0 / (1.0 + np.exp(-ax))
    out = small * big
    if out.ndim == 0:
        return float(out)
    return out


def logsumexp(a) -> float:
    """Max-subtracted log of a sum of exponentials."""
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(a - m))))
