"""Reference samplers: Euler on the probability-flow ODE, Euler on a
flow-matching field, and DPM-Solver++(2M) in data-prediction form.

Time runs from ``grid.times[0]`` (noise) down to ``grid.times[-1]``; ``dt``
is always the positive spacing.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .denoiser import EvalCounter
from .errors import ScheduleDomainError
from .schedule import NoiseSchedule, TimestepGrid

SOLVER_KINDS = ("euler-pfode", "euler-flow", "dpmpp-2m")


class SadaMode(str, enum.Enum):
    FRESH = "Fresh"
    STEP_WISE = "StepWise"
    MULTISTEP_WISE = "MultistepWise"
    TOKEN_WISE = "TokenWise"


@dataclass
class SolverStepRecord:
    step: int
    t: float
    x_t: np.ndarray
    eps_or_u: np.ndarray
    y_t: np.ndarray
    x0_t: np.ndarray
    was_fresh: bool
    mode: SadaMode
    fix_fraction: float = 1.0


@dataclass(frozen=True)
class SamplerConfig:
    solver_kind: str = "euler-pfode"
    steps: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.solver_kind not in SOLVER_KINDS:
            raise ValueError(f"unknown solver {self.solver_kind!r}; expected one of {SOLVER_KINDS}")
        if self.steps < 4:
            raise ValueError("steps must be >= 4")


def euler_step(x_t, y_t, dt: float) -> np.ndarray:
    """``x_{t-dt} = x_t - dt * y_t``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return np.asarray(x_t) - dt * np.asarray(y_t)


def dpmpp2m_step(x_t, x0_t, x0_prev, t: float, t_next: float, schedule: NoiseSchedule,
                 t_prev: float | None = None) -> np.ndarray:
    """One DPM-Solver++(2M) update from ``t`` to ``t_next < t``.

    ``x0_prev`` is the data prediction made at ``t_prev``; without it the
    update is the first-order exponential-integrator step.
    """
    if not t > t_next:
        raise ValueError("dpmpp2m_step needs t > t_next")
    try:
        lam, lam_next = schedule.log_snr(t), schedule.log_snr(t_next)
    except ScheduleDomainError as exc:
        raise ScheduleDomainError(f"log-SNR undefined on [{t_next}, {t}]") from exc
    h = lam_next - lam
    a_next, s_next, s = schedule.signal(t_next), schedule.sigma(t_next), schedule.sigma(t)
    x0_t = np.asarray(x0_t)
    if x0_prev is None:
        d = x0_t
    else:
        if t_prev is None:
            raise ValueError("t_prev is required with x0_prev")
        r = (lam - schedule.log_snr(t_prev)) / h
        d = (1.0 + 0.5 / r) * x0_t - (0.5 / r) * np.asarray(x0_prev)
    return (s_next / s) * np.asarray(x_t) - a_next * math.expm1(-h) * d


class Solver:
    """Stateful sampler; the caller supplies ``(y, x0)`` at every step.

    The solver never knows whether those came from a fresh model call or an
    approximation.
    """

    def __init__(self, kind: str, schedule: NoiseSchedule, grid: TimestepGrid):
        if kind not in SOLVER_KINDS:
            raise ValueError(f"unknown solver {kind!r}")
        if (kind == "euler-flow") != schedule.is_flow:
            raise ValueError(f"solver {kind!r} is incompatible with schedule {schedule.kind!r}")
        self.kind = kind
        self.schedule = schedule
        self.grid = grid
        self.dt = grid.dt
        self.reset()

    def reset(self) -> None:
        self._x0_prev = None
        self._t_prev = None

    @property
    def prediction(self) -> str:
        return "velocity" if self.kind == "euler-flow" else "epsilon"

    def derive(self, x, out, t: float):
        """``(eps, y, x0)`` from the model output at ``(x, t)``."""
        sch = self.schedule
        if self.kind == "euler-flow":
            u = np.asarray(out)
            return x + (1.0 - t) * u, u, x - t * u
        return out, sch.pf_ode_gradient(x, out, t), sch.data_prediction(x, out, t)

    def from_x0(self, x, x0, t: float):
        """``(eps, y, eps_or_u)`` consistent with a given data prediction."""
        sch = self.schedule
        if self.kind == "euler-flow":
            u = (np.asarray(x) - x0) / t
            return x + (1.0 - t) * u, u, u
        eps = sch.noise_from_data(x, x0, t)
        return eps, sch.pf_ode_gradient(x, eps, t), eps

    def from_eps(self, x, eps, t: float):
        """``(y, x0, eps_or_u)`` for a given noise prediction."""
        sch = self.schedule
        if self.kind == "euler-flow":
            x0 = sch.data_prediction(x, eps, t)
            u = eps - x0
            return u, x0, u
        return sch.pf_ode_gradient(x, eps, t), sch.data_prediction(x, eps, t), eps

    def step(self, i: int, x, y, x0) -> np.ndarray:
        t, t_next = float(self.grid.times[i]), float(self.grid.times[i + 1])
        if self.kind == "dpmpp-2m":
            x_next = dpmpp2m_step(x, x0, self._x0_prev, t, t_next, self.schedule, self._t_prev)
            self._x0_prev, self._t_prev = x0, t
            return x_next
        return euler_step(x, y, self.dt)


def initial_sample(dim: int, seed: int, schedule: NoiseSchedule, t_start: float) -> np.ndarray:
    """Standard normal draw scaled to the terminal marginal of unit-variance data."""
    rng = np.random.default_rng(seed)
    scale = math.sqrt(schedule.signal(t_start) ** 2 + schedule.sigma(t_start) ** 2)
    return scale * rng.standard_normal(dim)


def run_baseline(config: SamplerConfig, denoiser, schedule: NoiseSchedule,
                 counter: EvalCounter | None = None):
    """Unaccelerated run: one full model evaluation per step.

    Returns ``(trajectory, terminal)``.
    """
    grid = schedule.grid(config.steps)
    solver = Solver(config.solver_kind, schedule, grid)
    counter = counter if counter is not None else EvalCounter()
    x = initial_sample(denoiser.dim, config.seed, schedule, float(grid.times[0]))
    records = []
    for i in range(grid.count):
        t = float(grid.times[i])
        out = denoiser(x, t, counter=counter)
        _, y, x0 = solver.derive(x, out, t)
        records.append(SolverStepRecord(i, t, x, out, y, x0, True, SadaMode.FRESH))
        x = solver.step(i, x, y, x0)
    return records, x
