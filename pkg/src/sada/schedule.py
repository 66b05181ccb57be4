"""Noise schedules, sampling grids, and the conversions between a denoiser's
output and the trajectory velocity ``y = dx/dt``.

Three schedule kinds share one interface.  For the variance-preserving kinds
``x_t = sqrt(abar_t) x0 + sigma_t eps`` with ``sigma_t = sqrt(1 - abar_t)``.
For ``flow-linear`` the path is ``x_t = (1 - t) x0 + t eps``; ``alpha_bar`` then
returns ``(1 - t)**2`` so that ``signal = sqrt(alpha_bar)`` still holds, but
``sigma = t`` rather than ``sqrt(1 - alpha_bar)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientSamplesError, ScheduleDomainError

KINDS = ("vp-linear", "vp-cosine", "flow-linear")
FD_STEP = 1e-5
SIGMA_FLOOR = 1e-8
ALPHA_BAR_FLOOR = 1e-12


@dataclass(frozen=True)
class TimestepGrid:
    """``count`` sampling steps on ``count + 1`` uniformly spaced, decreasing times.

    The model is evaluated at ``times[:count]``; ``times[count]`` is where the
    run ends.  Both training boundaries t=0 and t=1 are excluded.
    """

    times: np.ndarray
    count: int

    @property
    def dt(self) -> float:
        return float(self.times[0] - self.times[1])

    def __len__(self) -> int:
        return self.count


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str = "vp-linear"
    num_train_steps: int = 1000
    beta_range: tuple[float, float] = (1e-4, 0.02)
    cosine_s: float = 0.008
    _cos0: float = field(init=False, repr=False, default=1.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {KINDS}")
        if self.num_train_steps < 2:
            raise ValueError("num_train_steps must be >= 2")
        b0, b1 = self.beta_range
        if not 0 < b0 < b1 < 1:
            raise ValueError(f"beta_range must satisfy 0 < b0 < b1 < 1, got {self.beta_range}")
        object.__setattr__(self, "beta_range", (float(b0), float(b1)))
        s = self.cosine_s
        object.__setattr__(self, "_cos0", math.cos(s / (1 + s) * math.pi / 2) ** 2)

    @property
    def is_flow(self) -> bool:
        return self.kind == "flow-linear"

    @staticmethod
    def _check(t: float) -> float:
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise ScheduleDomainError(f"t={t} outside [0, 1]")
        return t

    def beta(self, t: float) -> float:
        """Continuous-time rate for vp-linear: ``T * (b0 + (b1 - b0) t)``."""
        b0, b1 = self.beta_range
        return self.num_train_steps * (b0 + (b1 - b0) * t)

    def alpha_bar(self, t: float) -> float:
        t = self._check(t)
        if self.kind == "vp-linear":
            b0, b1 = self.beta_range
            return math.exp(-self.num_train_steps * (b0 * t + 0.5 * (b1 - b0) * t * t))
        if self.kind == "vp-cosine":
            s = self.cosine_s
            c = math.cos((t + s) / (1 + s) * math.pi / 2) ** 2 / self._cos0
            return min(max(c, 0.0), 1.0)
        return (1.0 - t) ** 2

    def signal(self, t: float) -> float:
        """Coefficient on the clean sample."""
        if self.is_flow:
            return 1.0 - self._check(t)
        return math.sqrt(self.alpha_bar(t))

    def sigma(self, t: float) -> float:
        if self.is_flow:
            return self._check(t)
        return math.sqrt(max(1.0 - self.alpha_bar(t), 0.0))

    def log_snr(self, t: float) -> float:
        a, s = self.signal(t), self.sigma(t)
        if a <= 0.0 or s <= 0.0:
            raise ScheduleDomainError(f"log-SNR undefined at t={t}")
        return math.log(a) - math.log(s)

    def _deriv(self, fn, t: float) -> float:
        t = self._check(t)
        h = FD_STEP
        lo, hi = max(t - h, 0.0), min(t + h, 1.0)
        return (fn(hi) - fn(lo)) / (hi - lo)

    def drift(self, t: float) -> float:
        """``f(t) = d/dt log signal(t)``."""
        return self._deriv(lambda u: math.log(self.signal(u)), t)

    def diffusion_sq(self, t: float) -> float:
        """``g^2(t) = d sigma^2/dt - 2 f(t) sigma^2``."""
        return self._deriv(lambda u: self.sigma(u) ** 2, t) - 2.0 * self.drift(t) * self.sigma(t) ** 2

    def pf_ode_gradient(self, x_t, eps, t: float) -> np.ndarray:
        """Velocity ``f x + g^2 / (2 sigma) eps`` of the probability-flow ODE."""
        s = self.sigma(t)
        if s < SIGMA_FLOOR:
            raise ScheduleDomainError(f"sigma({t})={s} below {SIGMA_FLOOR}; boundary step not excluded")
        return self.drift(t) * np.asarray(x_t) + (self.diffusion_sq(t) / (2.0 * s)) * np.asarray(eps)

    def data_prediction(self, x_t, eps, t: float) -> np.ndarray:
        if self.alpha_bar(t) <= ALPHA_BAR_FLOOR:
            raise ScheduleDomainError(f"alpha_bar({t}) underflows; cannot recover x0")
        return (np.asarray(x_t) - self.sigma(t) * np.asarray(eps)) / self.signal(t)

    def noise_from_data(self, x_t, x0, t: float) -> np.ndarray:
        """Inverse of ``data_prediction`` in its second argument."""
        s = self.sigma(t)
        if s < SIGMA_FLOOR:
            raise ScheduleDomainError(f"sigma({t})={s} below {SIGMA_FLOOR}")
        return (np.asarray(x_t) - self.signal(t) * np.asarray(x0)) / s

    def forward_noise(self, x0, eps, t: float) -> np.ndarray:
        return self.signal(t) * np.asarray(x0) + self.sigma(t) * np.asarray(eps)

    def grid(self, n_steps: int) -> TimestepGrid:
        """Uniform grid from ``1 - 1/T`` down to ``1/T`` with ``n_steps`` intervals."""
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        edge = 1.0 / self.num_train_steps
        return TimestepGrid(np.linspace(1.0 - edge, edge, n_steps + 1), n_steps)


def flow_gradient(u) -> np.ndarray:
    """Flow-matching models predict ``dx/dt`` directly."""
    return np.asarray(u, dtype=np.float64)


def expected_mean_check(n_samples: int, t: float, data, schedule: NoiseSchedule, rng=None):
    """Monte-Carlo mean of forward-noised samples and ``signal(t) * E[x0]``.

    ``data`` needs ``sample(n, rng)`` and ``mean()``.  Returns
    ``(empirical_mean, predicted, standard_error)``.
    """
    if n_samples < 100:
        raise InsufficientSamplesError(f"n_samples={n_samples} < 100")
    rng = np.random.default_rng(rng)
    x0 = data.sample(n_samples, rng)
    eps = rng.standard_normal(x0.shape)
    xt = schedule.signal(t) * x0 + schedule.sigma(t) * eps
    empirical = xt.mean(axis=0)
    stderr = xt.std(axis=0, ddof=1) / math.sqrt(n_samples)
    return empirical, schedule.signal(t) * np.asarray(data.mean()), stderr
