"""Pure-numpy implementations of the hot numeric loops.

The compiled extension (pbsd_lab._kernels) provides the same three entry
points with identical semantics; this module is the fallback selected at
import time when the extension is unavailable. Keep both in sync.
"""

from __future__ import annotations

import numpy as np


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, v.size + 1)
    rho = int(np.nonzero(u + (1.0 - css) / j > 0)[0][-1])
    lam = (1.0 - css[rho]) / (rho + 1.0)
    return np.maximum(v + lam, 0.0)


def pga_ascent(
    log_teacher: np.ndarray,
    rewards: np.ndarray,
    beta: float,
    start: np.ndarray,
    iters: int = 10_000,
    step0: float = 0.1,
    floor: float = 1e-12,
) -> np.ndarray:
    """Projected gradient ascent on F(p) = <p, r> - beta * KL(p || teacher).

    Steps follow step0 / sqrt(t); iterates live on the simplex via the
    Euclidean projection. The entropy gradient is evaluated with p floored
    at `floor` because it is unbounded at the boundary.
    """
    p = np.asarray(start, dtype=np.float64).copy()
    for t in range(1, iters + 1):
        grad = rewards - beta * (np.log(np.maximum(p, floor)) - log_teacher + 1.0)
        p = project_to_simplex(p + (step0 / np.sqrt(t)) * grad)
    return p


def mirror_polish(
    log_teacher: np.ndarray,
    rewards: np.ndarray,
    beta: float,
    start: np.ndarray,
    iters: int = 200,
    rel_step: float = 0.5,
) -> np.ndarray:
    """Multiplicative ascent toward the stationary point of F on the simplex.

    Updates log p <- log p + (rel_step / beta) * grad F, renormalized, which
    contracts the log-space error by (1 - rel_step) per iteration and
    resolves components across all magnitudes. Starts are floored to stay
    strictly interior.
    """
    p = np.maximum(np.asarray(start, dtype=np.float64), 1e-12)
    logp = np.log(p / p.sum())
    eta = rel_step / beta
    for _ in range(iters):
        grad = rewards - beta * (logp - log_teacher + 1.0)
        logp = logp + eta * grad
        logp -= logp.max()
        logp -= np.log(np.exp(logp).sum())
    return np.exp(logp)


def jacobi_eigenvalues(a: np.ndarray, tol_scale: float = 1e-12, max_sweeps: int = 60) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps until the off-diagonal Frobenius norm drops to
    tol_scale * max(trace, d * max|a|ulp-guard); returns eigenvalues sorted
    ascending.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    d = a.shape[0]
    if d == 1:
        return a[0, :1].copy()
    trace = float(np.trace(a))
    scale = max(abs(trace), float(np.abs(a).max()) * d, np.finfo(np.float64).tiny)
    threshold = tol_scale * scale
    for _ in range(max_sweeps):
        off2 = np.sum(a * a) - np.sum(np.diag(a) ** 2)
        off = np.sqrt(off2) if off2 > 0 else 0.0
        if off <= threshold:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) <= threshold / (d * d):
                    continue
                app, aqq = a[p, p], a[q, q]
                tau = (aqq - app) / (2.0 * apq)
                if tau >= 0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                a[p, q] = 0.0
                a[q, p] = 0.0
    return np.sort(np.diag(a))
