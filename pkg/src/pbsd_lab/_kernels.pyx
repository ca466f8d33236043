# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the hot loops in _kernels_py; same signatures and
semantics. The dispatcher in kernels.py picks this module when the build
produced it and falls back to the numpy version otherwise."""

from libc.math cimport exp, fabs, log, sqrt
from libc.stdlib cimport free, malloc

import numpy as np


cdef void _project_inplace(double* v, double* work, Py_ssize_t n):
    """Euclidean projection onto the simplex; overwrites v."""
    cdef Py_ssize_t i, j, child, root, rho
    cdef double css, lam, tmp
    # descending heap-sort of a copy into work
    for i in range(n):
        work[i] = v[i]
    # build max-heap then extract to obtain ascending order at the tail;
    # we only need the sorted order, so run a simple heapsort.
    for i in range(n // 2 - 1, -1, -1):
        root = i
        while True:
            child = 2 * root + 1
            if child >= n:
                break
            if child + 1 < n and work[child + 1] > work[child]:
                child += 1
            if work[child] > work[root]:
                tmp = work[root]; work[root] = work[child]; work[child] = tmp
                root = child
            else:
                break
    for i in range(n - 1, 0, -1):
        tmp = work[0]; work[0] = work[i]; work[i] = tmp
        root = 0
        while True:
            child = 2 * root + 1
            if child >= i:
                break
            if child + 1 < i and work[child + 1] > work[child]:
                child += 1
            if work[child] > work[root]:
                tmp = work[root]; work[root] = work[child]; work[child] = tmp
                root = child
            else:
                break
    # work is ascending; walk descending via index n-1-j
    css = 0.0
    rho = 0
    lam = 0.0
    for j in range(n):
        css += work[n - 1 - j]
        tmp = work[n - 1 - j] + (1.0 - css) / (j + 1)
        if tmp > 0.0:
            rho = j
            lam = (1.0 - css) / (j + 1)
    # recompute lam at rho (css must match the prefix sum up to rho)
    css = 0.0
    for j in range(rho + 1):
        css += work[n - 1 - j]
    lam = (1.0 - css) / (rho + 1)
    for i in range(n):
        v[i] = v[i] + lam
        if v[i] < 0.0:
            v[i] = 0.0


def project_to_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    out = np.array(v, dtype=np.float64, copy=True)
    cdef double[::1] mv = out
    cdef Py_ssize_t n = mv.shape[0]
    cdef double* work = <double*> malloc(n * sizeof(double))
    if work == NULL:
        raise MemoryError()
    try:
        _project_inplace(&mv[0], work, n)
    finally:
        free(work)
    return out


def pga_ascent(log_teacher, rewards, beta, start, iters=10_000, step0=0.1, floor=1e-12):
    """Projected gradient ascent on F(p) = <p, r> - beta * KL(p || teacher)."""
    cdef double[::1] logq = np.ascontiguousarray(log_teacher, dtype=np.float64)
    cdef double[::1] r = np.ascontiguousarray(rewards, dtype=np.float64)
    p_arr = np.array(start, dtype=np.float64, copy=True)
    cdef double[::1] p = p_arr
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t t, i
    cdef double b = beta, s0 = step0, fl = floor
    cdef int n_iter = iters
    cdef double step, pi
    cdef double* work = <double*> malloc(n * sizeof(double))
    if work == NULL:
        raise MemoryError()
    try:
        for t in range(1, n_iter + 1):
            step = s0 / sqrt(<double> t)
            for i in range(n):
                pi = p[i]
                if pi < fl:
                    pi = fl
                p[i] = p[i] + step * (r[i] - b * (log(pi) - logq[i] + 1.0))
            _project_inplace(&p[0], work, n)
    finally:
        free(work)
    return p_arr


def mirror_polish(log_teacher, rewards, beta, start, iters=200, rel_step=0.5):
    """Multiplicative ascent to the stationary point of F on the simplex."""
    cdef double[::1] logq = np.ascontiguousarray(log_teacher, dtype=np.float64)
    cdef double[::1] r = np.ascontiguousarray(rewards, dtype=np.float64)
    p_arr = np.array(start, dtype=np.float64, copy=True)
    cdef double[::1] p = p_arr
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t k, i
    cdef double b = beta, eta = rel_step / beta
    cdef int n_iter = iters
    cdef double total = 0.0, mx, lse
    logp_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] logp = logp_arr
    for i in range(n):
        if p[i] < 1e-12:
            p[i] = 1e-12
        total += p[i]
    for i in range(n):
        logp[i] = log(p[i] / total)
    for k in range(n_iter):
        mx = -1e300
        for i in range(n):
            logp[i] = logp[i] + eta * (r[i] - b * (logp[i] - logq[i] + 1.0))
            if logp[i] > mx:
                mx = logp[i]
        lse = 0.0
        for i in range(n):
            logp[i] -= mx
            lse += exp(logp[i])
        lse = log(lse)
        for i in range(n):
            logp[i] -= lse
    for i in range(n):
        p[i] = exp(logp[i])
    return p_arr


def jacobi_eigenvalues(a, tol_scale=1e-12, max_sweeps=60):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations."""
    a_arr = np.array(a, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] m = a_arr
    cdef Py_ssize_t d = m.shape[0]
    if d == 1:
        return a_arr[0, :1].copy()
    cdef Py_ssize_t p, q, i, sweep
    cdef double trace = 0.0, amax = 0.0, off, diag2, total2
    cdef double app, aqq, apq, tau, t, c, s, vp, vq
    cdef double threshold, scale, tiny = 2.2250738585072014e-308
    for i in range(d):
        trace += m[i, i]
    for p in range(d):
        for q in range(d):
            if fabs(m[p, q]) > amax:
                amax = fabs(m[p, q])
    scale = fabs(trace)
    if amax * d > scale:
        scale = amax * d
    if scale < tiny:
        scale = tiny
    threshold = tol_scale * scale
    for sweep in range(max_sweeps):
        total2 = 0.0
        diag2 = 0.0
        for p in range(d):
            for q in range(d):
                total2 += m[p, q] * m[p, q]
            diag2 += m[p, p] * m[p, p]
        off = sqrt(total2 - diag2) if total2 > diag2 else 0.0
        if off <= threshold:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = m[p, q]
                if fabs(apq) <= threshold / (d * d):
                    continue
                app = m[p, p]
                aqq = m[q, q]
                tau = (aqq - app) / (2.0 * apq)
                if tau >= 0:
                    t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                for i in range(d):
                    vp = m[p, i]
                    vq = m[q, i]
                    m[p, i] = c * vp - s * vq
                    m[q, i] = s * vp + c * vq
                for i in range(d):
                    vp = m[i, p]
                    vq = m[i, q]
                    m[i, p] = c * vp - s * vq
                    m[i, q] = s * vp + c * vq
                m[p, q] = 0.0
                m[q, p] = 0.0
    return np.sort(np.diag(a_arr))
