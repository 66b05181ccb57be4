# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_kernels_py``."""
from libc.math cimport exp, log, M_PI, INFINITY, isfinite

import numpy as np
cimport numpy as cnp

from .errors import DegenerateDensityError, DimensionError

cnp.import_array()

NAME = "cython"

cdef enum:
    MAX_TERMS = 16


def lincomb(coeffs, vectors):
    cdef Py_ssize_t m = len(vectors)
    if m == 0 or len(coeffs) != m:
        raise DimensionError("lincomb needs one coefficient per vector")
    if m > MAX_TERMS:
        raise DimensionError(f"lincomb supports at most {MAX_TERMS} terms")
    cdef double c[MAX_TERMS]
    cdef const double* p[MAX_TERMS]
    cdef const double[::1] view
    cdef Py_ssize_t n = -1, k, j
    keep = []
    for k in range(m):
        arr = np.ascontiguousarray(vectors[k], dtype=np.float64)
        if arr.ndim != 1 or (n >= 0 and arr.shape[0] != n):
            raise DimensionError(f"vector shape {arr.shape} != ({n},)")
        n = arr.shape[0]
        keep.append(arr)
        view = arr
        p[k] = &view[0] if n > 0 else NULL
        c[k] = coeffs[k]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double acc
    with nogil:
        for j in range(n):
            acc = c[0] * p[0][j]
            for k in range(1, m):
                acc = acc + c[k] * p[k][j]
            o[j] = acc
    return out


def lagrange_weights(times, double t):
    cdef const double[::1] tv = np.ascontiguousarray(times, dtype=np.float64)
    cdef Py_ssize_t m = tv.shape[0], i, j
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] w = out
    cdef double acc, ti, tj
    for i in range(m):
        acc = 1.0
        ti = tv[i]
        for j in range(m):
            if j != i:
                tj = tv[j]
                acc *= (t - tj) / (ti - tj)
        w[i] = acc
    return out


def gmm_eps(x, double a, double s, log_weights, means, variances):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] lw = np.ascontiguousarray(log_weights, dtype=np.float64)
    cdef const double[:, ::1] mu = np.ascontiguousarray(means, dtype=np.float64)
    cdef const double[::1] v = np.ascontiguousarray(variances, dtype=np.float64)
    cdef Py_ssize_t d = xv.shape[0], K = mu.shape[0], k, j
    if mu.shape[1] != d:
        raise DimensionError(f"means have dim {mu.shape[1]}, x has {d}")
    var_a = np.empty(K)
    logit_a = np.empty(K)
    cdef double[::1] var = var_a
    cdef double[::1] logit = logit_a
    cdef double d2, diff, top = -INFINITY, tot = 0.0, sc
    for k in range(K):
        var[k] = a * a * v[k] + s * s
        d2 = 0.0
        for j in range(d):
            diff = a * mu[k, j] - xv[j]
            d2 += diff * diff
        logit[k] = lw[k] - 0.5 * d * log(2.0 * M_PI * var[k]) - 0.5 * d2 / var[k]
        if logit[k] > top:
            top = logit[k]
    if not isfinite(top):
        raise DegenerateDensityError("all mixture responsibilities underflowed")
    for k in range(K):
        logit[k] = exp(logit[k] - top)
        tot += logit[k]
    out = np.zeros(d)
    cdef double[::1] o = out
    for k in range(K):
        sc = logit[k] / tot / var[k]
        for j in range(d):
            o[j] += sc * (a * mu[k, j] - xv[j])
    for j in range(d):
        o[j] = -s * o[j]
    return out


def criterion_stats(err, curvature):
    cdef const double[::1] e = np.ascontiguousarray(err, dtype=np.float64)
    cdef const double[::1] c = np.ascontiguousarray(curvature, dtype=np.float64)
    cdef Py_ssize_t n = e.shape[0], j, neg = 0
    if c.shape[0] != n:
        raise DimensionError(f"({n},) vs ({c.shape[0]},)")
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double tot = 0.0
    for j in range(n):
        o[j] = e[j] * c[j]
        tot += o[j]
        if o[j] < 0.0:
            neg += 1
    return out, tot / n, neg / <double>n
