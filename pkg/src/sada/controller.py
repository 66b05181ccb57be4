"""Stability-gated acceleration of ODE sampling.

After every step that called the model, the controller compares the
solver's next state against the Adams-Moulton estimate of it and checks
whether that extrapolation error is anti-aligned with the second difference
of the velocity.  The verdict picks how the *next* step is computed:

* stable: skip the model, estimate the state by Adams-Moulton and reuse the
  noise prediction (``StepWise``); after ``M`` consecutive stable verdicts,
  switch to ``MultistepWise`` where only every ``r``-th grid step calls the
  model and the rest take a Lagrange-interpolated data prediction;
* unstable: call the model on unstable tokens only and fill the rest from
  the per-layer cache (``TokenWise``).

An independent comparison policy (relative third difference of the states
against a threshold, with noise reuse) is also provided.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ._backend import kernels
from .denoiser import EvalCounter
from .errors import DegenerateNormError, NotEnoughHistoryError
from .numerics import (
    LagrangeBuffer,
    RingBuffer3,
    adams_moulton_estimate,
    backward_extrapolate,
    lagrange_interpolate,
)
from .report import RunReport, compute_psnr, relative_l2
from .solver import SadaMode, SamplerConfig, Solver, SolverStepRecord, initial_sample, run_baseline
from .tokencache import LayerCache, TokenCachePlan, layered_forward, tokenwise_execute, tokenwise_plan

WARMUP_STEPS = 3
POLICIES = ("sada", "eq5", "none")
REDUCTIONS = ("mean", "majority")
FORCE_MODES = (None, "fresh", "stable", "unstable")
ASSUMPTIONS = (
    "token-wise reconstructions feed the solver's data-prediction history",
    "speedup counts token-layer evaluations, not wall-clock",
)


@dataclass
class PolicyParams:
    policy: str = "sada"
    criterion_reduction: str = "mean"
    M: int = 3
    r: int = 4
    lagrange_nodes: int = 4
    T_star: int = 5
    cache_interval: int = 3
    token_stat: str = "channel-mean"
    force_mode: str | None = None
    tau: float = 0.01
    max_consecutive_skips: int = 3
    final_fresh_steps: int = 1

    def violations(self) -> list[str]:
        out = []
        if self.policy not in POLICIES:
            out.append(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.criterion_reduction not in REDUCTIONS:
            out.append(f"criterion_reduction must be one of {REDUCTIONS}")
        if self.token_stat not in ("channel-mean", "channel-majority"):
            out.append("token_stat must be 'channel-mean' or 'channel-majority'")
        if self.force_mode not in FORCE_MODES:
            out.append(f"force_mode must be one of {FORCE_MODES}")
        if self.M < 1:
            out.append("M must be >= 1")
        if self.r < 2:
            out.append("r must be >= 2")
        if self.lagrange_nodes < 2:
            out.append("lagrange_nodes must be >= 2")
        if self.T_star < 0:
            out.append("T_star must be >= 0")
        if self.cache_interval < 1:
            out.append("cache_interval must be >= 1")
        if self.max_consecutive_skips < 1:
            out.append("max_consecutive_skips must be >= 1")
        return out


@dataclass
class StabilityReport:
    signal: np.ndarray
    scalar_stat: float
    stable_fraction: float
    is_stable: bool


@dataclass
class MultistepState:
    capacity: int = 4
    interval: int = 4
    entered: bool = False
    consecutive_stable: int = 0
    buffer: LagrangeBuffer = field(init=False)

    def __post_init__(self):
        self.buffer = LagrangeBuffer(self.capacity)


def second_difference(grads: RingBuffer3) -> np.ndarray:
    """``y_t - 2 y_{t+1} + y_{t+2}`` from a newest-first buffer."""
    if len(grads) < 3:
        raise NotEnoughHistoryError(f"need 3 gradients, have {len(grads)}")
    return kernels.lincomb((1.0, -2.0, 1.0), [grads[0], grads[1], grads[2]])


def evaluate_criterion(x_next, x_hat, grads: RingBuffer3, reduction: str = "mean") -> StabilityReport:
    """Stable when the extrapolation error points against the velocity curvature."""
    d2y = second_difference(grads)
    err = kernels.lincomb((1.0, -1.0), [np.asarray(x_next, dtype=float), np.asarray(x_hat, dtype=float)])
    signal, mean, frac = kernels.criterion_stats(err, d2y)
    if reduction == "mean":
        stable = mean < 0.0
    elif reduction == "majority":
        stable = frac > 0.5
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    return StabilityReport(signal, mean, frac, bool(stable))


def eq5_statistic(states: RingBuffer3, x_next) -> float:
    d0 = float(np.linalg.norm(np.asarray(x_next) - states[0]))
    d1 = float(np.linalg.norm(states[0] - states[1]))
    d2 = float(np.linalg.norm(states[1] - states[2]))
    if d1 == 0.0:
        raise DegenerateNormError("middle state difference has zero norm")
    return ((d2 + d0) / 2.0 - d1) / d1


def eq5_baseline_criterion(states: RingBuffer3, x_next, tau: float) -> bool:
    """Relative third-difference test on state norms; ``True`` means bypass the next model call."""
    if len(states) < 3:
        raise NotEnoughHistoryError("need 3 past states")
    return eq5_statistic(states, x_next) <= tau


def stepwise_approximate(x_t, grads: RingBuffer3, eps_t, dt: float, t_next: float, solver: Solver):
    """Adams-Moulton state estimate, reused noise, and the implied data prediction.

    Returns ``(x_hat_next, eps_hat_next, x0_hat_next)``; no model call.
    """
    x_hat = adams_moulton_estimate(x_t, grads, dt)
    eps_hat = np.asarray(eps_t)
    x0_hat = solver.schedule.data_prediction(x_hat, eps_hat, t_next)
    return x_hat, eps_hat, x0_hat


def finite_difference_approximate(states: RingBuffer3, eps_t, t_next: float, solver: Solver):
    """Third-order backward-extrapolation counterpart of :func:`stepwise_approximate`."""
    x_hat = backward_extrapolate(states, 3)
    eps_hat = np.asarray(eps_t)
    return x_hat, eps_hat, solver.schedule.data_prediction(x_hat, eps_hat, t_next)


def multistep_update(state: MultistepState, report: StabilityReport | None, step: int, t: float,
                     x0_fresh=None, min_consecutive: int = 3, enabled: bool = True):
    """Advance the multistep gate for grid index ``step``.

    ``report`` is the verdict computed at this step (None when the step was
    not a model call).  Returns ``(state, action)`` with action one of
    ``'cache-node'``, ``'interpolate'``, ``'pass'``.  The action describes
    what grid index ``step`` itself contributes: r-aligned steps push their
    data prediction as a node.
    """
    if report is not None:
        if report.is_stable:
            state.consecutive_stable += 1
        else:
            state.consecutive_stable = 0
            state.entered = False
        if (enabled and not state.entered and state.consecutive_stable >= min_consecutive
                and len(state.buffer) >= state.capacity):
            state.entered = True
    action = "pass"
    if step % state.interval == 0 and x0_fresh is not None:
        state.buffer.push(t, x0_fresh)
        action = "cache-node"
    elif state.entered and x0_fresh is None:
        action = "interpolate"
    return state, action


def multistep_interpolate(state: MultistepState, t: float) -> np.ndarray:
    if len(state.buffer) < 2:
        raise NotEnoughHistoryError("cache underfull: fewer than 2 Lagrange nodes")
    return lagrange_interpolate(state.buffer, t)


class SadaController:
    """Per-run state machine; one instance per sampling run."""

    def __init__(self, config: SamplerConfig, denoiser, schedule, params: PolicyParams | None = None):
        self.config = config
        self.denoiser = denoiser
        self.schedule = schedule
        self.params = params or PolicyParams()
        self.grid = schedule.grid(config.steps)
        self.solver = Solver(config.solver_kind, schedule, self.grid)
        self.counter = EvalCounter()
        self.cache = LayerCache.for_model(denoiser, self.params.T_star, self.params.cache_interval)
        self.multistep = MultistepState(self.params.lagrange_nodes, self.params.r)
        # a 4-node buffer at spacing 4 cannot fill in fewer than 7 steps
        self.multistep_enabled = config.steps >= 7
        self.xs = RingBuffer3()
        self.ys = RingBuffer3()
        self.reports: list[StabilityReport | None] = []
        self.history_log: list[tuple] = []
        # filled as the run advances so an aborted run still has its prefix
        self.records: list[SolverStepRecord] = []

    def _force(self, report: StabilityReport) -> StabilityReport:
        fm = self.params.force_mode
        if fm == "stable":
            return StabilityReport(report.signal, report.scalar_stat, report.stable_fraction, True)
        if fm == "unstable":
            return StabilityReport(report.signal, report.scalar_stat, report.stable_fraction, False)
        return report

    def _token_ready(self, step: int) -> bool:
        return self.cache.active(step) and (self.cache.initialized or self.cache.is_init_step(step))

    def _evaluate(self, x, t, step, mode, plan):
        if mode == SadaMode.TOKEN_WISE:
            return tokenwise_execute(x, plan, self.cache, self.denoiser, t, step, counter=self.counter)
        if self.cache.active(step):
            # a full forward past the cache start refreshes every layer map
            return layered_forward(self.denoiser, x, t, cache=self.cache, counter=self.counter, store=True)
        return layered_forward(self.denoiser, x, t, counter=self.counter)

    def run(self):
        p = self.params
        grid, solver = self.grid, self.solver
        n = grid.count
        x = initial_sample(self.denoiser.dim, self.config.seed, self.schedule, float(grid.times[0]))
        records = self.records = []
        mode, plan = SadaMode.FRESH, None
        x_hat_next = None
        eps_prev = None
        controller_on = p.policy == "sada" and p.force_mode != "fresh"
        eq5_on = p.policy == "eq5" and p.force_mode != "fresh"
        consecutive_skips = 0
        for i in range(n):
            t = float(grid.times[i])
            fresh = mode in (SadaMode.FRESH, SadaMode.TOKEN_WISE)
            fix_fraction = 1.0
            if fresh:
                out = self._evaluate(x, t, i, mode, plan)
                eps, y, x0 = solver.derive(x, out, t)
                if mode == SadaMode.TOKEN_WISE and not self.cache.is_init_step(i):
                    fix_fraction = plan.fix_fraction
                consecutive_skips = 0
            elif mode == SadaMode.STEP_WISE:
                if eq5_on:
                    eps = eps_prev
                else:
                    x = x_hat_next
                    eps = np.asarray(eps_prev)
                y, x0, out = solver.from_eps(x, eps, t)
                self.counter.skipped_steps += 1
                consecutive_skips += 1
            else:
                x0 = multistep_interpolate(self.multistep, t)
                eps, y, out = solver.from_x0(x, x0, t)
                self.counter.skipped_steps += 1
            records.append(SolverStepRecord(i, t, x, out, y, x0, fresh, mode, fix_fraction))
            self.history_log.append((x, y, x0))
            x_next = solver.step(i, x, y, x0)
            self.xs.push(x, t)
            self.ys.push(y, t)
            eps_prev = eps

            report = None
            next_mode = SadaMode.FRESH
            last_next = i + 1 >= n - p.final_fresh_steps
            if controller_on and fresh and len(self.ys) == 3 and i + 1 >= WARMUP_STEPS:
                x_hat_next = adams_moulton_estimate(x, self.ys, grid.dt)
                report = self._force(evaluate_criterion(x_next, x_hat_next, self.ys, p.criterion_reduction))
            if controller_on:
                self.multistep, _ = multistep_update(
                    self.multistep, report, i, t, x0 if (fresh or i % p.r == 0) else None,
                    min_consecutive=p.M, enabled=self.multistep_enabled)
                if last_next:
                    pass
                elif self.multistep.entered:
                    next_mode = SadaMode.FRESH if (i + 1) % p.r == 0 else SadaMode.MULTISTEP_WISE
                elif report is not None:
                    if report.is_stable:
                        next_mode = SadaMode.STEP_WISE
                    elif self._token_ready(i + 1):
                        next_mode = SadaMode.TOKEN_WISE
                        plan = tokenwise_plan(report, self.denoiser.token_grid, p.token_stat)
            elif eq5_on and len(self.xs) == 3 and i + 1 >= WARMUP_STEPS and not last_next:
                if consecutive_skips < p.max_consecutive_skips:
                    try:
                        skip = eq5_baseline_criterion(self.xs, x_next, p.tau)
                    except DegenerateNormError:
                        skip = False
                    if skip:
                        next_mode = SadaMode.STEP_WISE
            self.reports.append(report)
            x = x_next
            mode = next_mode
        return records, x


def sada_run(config: SamplerConfig, denoiser, schedule, policy_params: PolicyParams | None = None,
             baseline=None, peak: float | None = None):
    """Accelerated run plus its report against a same-seed baseline.

    ``baseline`` may be a precomputed ``(trajectory, terminal)`` pair.
    Returns ``(trajectory, terminal, report)``.
    """
    params = policy_params or PolicyParams()
    start = time.perf_counter()
    ctl = SadaController(config, denoiser, schedule, params)
    records, terminal = ctl.run()
    wall = time.perf_counter() - start
    if baseline is None:
        baseline = run_baseline(config, denoiser, schedule)
    base_records, base_terminal = baseline
    report = build_report(records, terminal, base_records, base_terminal, ctl.counter,
                          denoiser.tokens_per_forward, params, wall, peak)
    report.extra["stable_fractions"] = [None if r is None else r.stable_fraction for r in ctl.reports]
    return records, terminal, report


def build_report(records, terminal, base_records, base_terminal, counter: EvalCounter,
                 tokens_per_forward: int, params: PolicyParams | None, wall: float,
                 peak: float | None = None) -> RunReport:
    modes = {m.value: 0 for m in SadaMode}
    for rec in records[1:]:
        modes[rec.mode.value] += 1
    per_step = [float(np.mean((a.x_t - b.x_t) ** 2)) for a, b in zip(records, base_records)]
    peak = float(np.max(np.abs(base_terminal))) if peak is None else peak
    nfe_equiv = counter.nfe_equivalent(tokens_per_forward)
    return RunReport(
        nfe_full=counter.full_evals,
        nfe_token_fraction=(counter.partial_token_evals / tokens_per_forward),
        nfe_equivalent=nfe_equiv,
        speedup=len(base_records) / nfe_equiv if nfe_equiv > 0 else math.inf,
        mode_counts=modes,
        terminal_rel_l2=relative_l2(terminal, base_terminal),
        terminal_psnr_db=compute_psnr(terminal, base_terminal, peak),
        per_step_mse=per_step,
        wall_time_s=wall,
        policy=asdict(params) if params is not None else {},
        assumptions=list(ASSUMPTIONS),
    )


__all__ = [
    "MultistepState",
    "PolicyParams",
    "SadaController",
    "StabilityReport",
    "TokenCachePlan",
    "eq5_baseline_criterion",
    "evaluate_criterion",
    "finite_difference_approximate",
    "multistep_update",
    "sada_run",
    "stepwise_approximate",
]
