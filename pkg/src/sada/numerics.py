"""Backward differences, backward extrapolation, Adams-Moulton estimation and
Lagrange interpolation over cached trajectory nodes.

Index convention: history buffers are ordered newest first, and along a
sampling run the time *decreases*, so ``history[0]`` is ``x_{t+1}`` when the
newest state is ``x_t``.  The first backward difference is
``x_t - x_{t+1}`` everywhere in this package.
"""
from __future__ import annotations

from collections import deque
from math import comb
from typing import Iterator, Sequence

import numpy as np

from ._backend import kernels
from .errors import (
    DegenerateNodesError,
    DimensionError,
    NonUniformGridError,
    NotEnoughHistoryError,
)

UNIFORM_RTOL = 1e-9


def as_vector(x) -> np.ndarray:
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1:
        v = v.reshape(-1)
    return v


class RingBuffer3:
    """Fixed-capacity history of vectors with their times, newest first."""

    def __init__(self, capacity: int = 3):
        self.capacity = capacity
        self._values: deque[np.ndarray] = deque(maxlen=capacity)
        self._times: deque[float] = deque(maxlen=capacity)

    def push(self, value, time: float | None = None) -> None:
        v = as_vector(value)
        if self._values and v.shape != self._values[0].shape:
            raise DimensionError(f"pushed shape {v.shape} != {self._values[0].shape}")
        self._values.appendleft(v)
        self._times.appendleft(np.nan if time is None else float(time))

    def __len__(self) -> int:
        return len(self._values)

    def __getitem__(self, i: int) -> np.ndarray:
        return self._values[i]

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self._values)

    @property
    def times(self) -> list[float]:
        return list(self._times)

    @property
    def full(self) -> bool:
        return len(self._values) == self.capacity

    def clear(self) -> None:
        self._values.clear()
        self._times.clear()

    def copy(self) -> "RingBuffer3":
        out = RingBuffer3(self.capacity)
        out._values = deque(self._values, maxlen=self.capacity)
        out._times = deque(self._times, maxlen=self.capacity)
        return out

    @classmethod
    def from_values(cls, values: Sequence, times: Sequence[float] | None = None):
        """Build from newest-first ``values``."""
        buf = cls(max(3, len(values)))
        times = [None] * len(values) if times is None else list(times)
        for v, t in zip(reversed(list(values)), reversed(times)):
            buf.push(v, t)
        return buf


class LagrangeBuffer:
    """Rolling store of ``(time, vector)`` nodes; the oldest node is evicted."""

    def __init__(self, capacity: int = 4):
        if capacity < 2:
            raise ValueError("a Lagrange buffer needs room for at least 2 nodes")
        self.capacity = capacity
        self._nodes: deque[tuple[float, np.ndarray]] = deque(maxlen=capacity)

    def push(self, time: float, value) -> None:
        v = as_vector(value)
        if self._nodes and v.shape != self._nodes[-1][1].shape:
            raise DimensionError(f"pushed shape {v.shape} != {self._nodes[-1][1].shape}")
        self._nodes.append((float(time), v))

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self._nodes])

    @property
    def values(self) -> list[np.ndarray]:
        return [v for _, v in self._nodes]

    @property
    def max_spacing(self) -> float:
        ts = np.sort(self.times)
        return float(np.max(np.diff(ts))) if len(ts) > 1 else 0.0

    @property
    def full(self) -> bool:
        return len(self._nodes) == self.capacity

    def clear(self) -> None:
        self._nodes.clear()


def binomial_difference_weights(order: int) -> list[int]:
    """Weights of the k-th backward difference, newest first: ``(-1)^i C(k, i)``."""
    return [(-1) ** i * comb(order, i) for i in range(order + 1)]


def extrapolation_weights(k: int) -> list[int]:
    """Weights ``(-1)^i C(k, i+1)`` predicting the next point from ``k`` newest-first values."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return [(-1) ** i * comb(k, i + 1) for i in range(k)]


def _check_same_length(vectors) -> None:
    n = vectors[0].shape
    for v in vectors[1:]:
        if v.shape != n:
            raise DimensionError(f"vector shape {v.shape} != {n}")


def backward_diff(order: int, history: RingBuffer3, newest) -> np.ndarray:
    """k-th backward difference at ``newest`` using ``history`` (newest first)."""
    if not 1 <= order <= 3:
        raise ValueError("order must be in 1..3")
    if len(history) < order:
        raise NotEnoughHistoryError(f"order {order} needs {order} past vectors, have {len(history)}")
    vectors = [as_vector(newest)] + [history[i] for i in range(order)]
    _check_same_length(vectors)
    return kernels.lincomb(binomial_difference_weights(order), vectors)


def backward_extrapolate(history: RingBuffer3, k: int = 3) -> np.ndarray:
    """Predict the next state from the ``k`` newest states; k=3 gives ``3x_t - 3x_{t+1} + x_{t+2}``."""
    if len(history) < k:
        raise NotEnoughHistoryError(f"extrapolation of order {k} needs {k} vectors, have {len(history)}")
    vectors = [history[i] for i in range(k)]
    _check_same_length(vectors)
    return kernels.lincomb(extrapolation_weights(k), vectors)


def check_uniform(times: Sequence[float], dt: float, rtol: float = UNIFORM_RTOL) -> None:
    """Raise if consecutive ``times`` are not spaced by ``dt`` (NaN times are not checked)."""
    ts = np.asarray(times, dtype=float)
    if np.isnan(ts).any():
        return
    gaps = np.diff(ts)
    if np.any(np.abs(np.abs(gaps) - dt) > rtol * dt):
        raise NonUniformGridError(f"spacing {gaps.tolist()} differs from dt={dt}")


def adams_moulton_coefficients(dt: float) -> tuple[float, float, float, float]:
    """Coefficients on ``(x_t, y_t, y_{t+1}, y_{t+2})``."""
    return (1.0, -5.0 * dt / 6.0, -5.0 * dt / 6.0, 2.0 * dt / 3.0)


def adams_moulton_estimate(x_t, grads: RingBuffer3, dt: float) -> np.ndarray:
    """Estimate the next state from ``x_t`` and the three newest velocities.

    ``dt`` is the positive grid spacing; time decreases along the run.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if len(grads) < 3:
        raise NotEnoughHistoryError(f"need 3 gradients, have {len(grads)}")
    check_uniform(grads.times[:3], dt)
    vectors = [as_vector(x_t), grads[0], grads[1], grads[2]]
    _check_same_length(vectors)
    return kernels.lincomb(adams_moulton_coefficients(dt), vectors)


def lagrange_interpolate(buf: LagrangeBuffer, t: float) -> np.ndarray:
    """Evaluate the Lagrange polynomial through the buffered nodes at ``t``."""
    if len(buf) < 2:
        raise NotEnoughHistoryError(f"interpolation needs >= 2 nodes, have {len(buf)}")
    times = buf.times
    if len(np.unique(times)) != len(times):
        raise DegenerateNodesError(f"duplicate node times {times.tolist()}")
    w = kernels.lagrange_weights(times, float(t))
    return kernels.lincomb(w, buf.values)
