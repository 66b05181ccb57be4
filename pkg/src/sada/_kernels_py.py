"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature.
Loop orders in ``lincomb`` and ``lagrange_weights`` are kept identical to the
compiled versions so both backends round the same way.
"""
import math

import numpy as np

from .errors import DegenerateDensityError, DimensionError

NAME = "python"


def lincomb(coeffs, vectors):
    """Return ``sum(c * v)`` accumulated left to right."""
    if len(coeffs) != len(vectors) or not vectors:
        raise DimensionError("lincomb needs one coefficient per vector")
    n = vectors[0].shape[0]
    for v in vectors:
        if v.shape != (n,):
            raise DimensionError(f"vector shape {v.shape} != ({n},)")
    out = float(coeffs[0]) * vectors[0]
    for c, v in zip(coeffs[1:], vectors[1:]):
        out = out + float(c) * v
    return out


def lagrange_weights(times, t):
    m = len(times)
    w = np.empty(m)
    for i in range(m):
        acc = 1.0
        ti = float(times[i])
        for j in range(m):
            if j != i:
                tj = float(times[j])
                acc *= (t - tj) / (ti - tj)
        w[i] = acc
    return w


def gmm_eps(x, a, s, log_weights, means, variances):
    """Noise prediction ``-s * grad log p`` for an isotropic mixture seen at scale ``a``.

    Component k of the marginal has mean ``a * means[k]`` and variance
    ``a**2 * variances[k] + s**2``.
    """
    d = x.shape[0]
    if means.shape[1] != d:
        raise DimensionError(f"means have dim {means.shape[1]}, x has {d}")
    var = a * a * variances + s * s
    diff = a * means - x[None, :]
    d2 = np.einsum("kd,kd->k", diff, diff)
    logits = log_weights - 0.5 * d * np.log(2.0 * math.pi * var) - 0.5 * d2 / var
    top = logits.max()
    if not np.isfinite(top):
        raise DegenerateDensityError("all mixture responsibilities underflowed")
    r = np.exp(logits - top)
    r /= r.sum()
    score = (r / var) @ diff
    return -s * score


def criterion_stats(err, curvature):
    """Elementwise product, its mean, and the share of negative entries."""
    if err.shape != curvature.shape:
        raise DimensionError(f"{err.shape} vs {curvature.shape}")
    signal = err * curvature
    return signal, float(signal.mean()), float(np.count_nonzero(signal < 0.0)) / signal.size
