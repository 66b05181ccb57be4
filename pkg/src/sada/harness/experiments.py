"""Experiment drivers: paired baseline/accelerated runs, reconstruction-error
comparisons, token-pruning sweeps, convergence-order studies and the policy
head-to-head.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from ..controller import PolicyParams, SadaController, build_report
from ..denoiser import EvalCounter, GaussianMixture, GMMDenoiser, TokenDenoiser, TokenModel
from ..numerics import (
    LagrangeBuffer,
    RingBuffer3,
    adams_moulton_estimate,
    backward_extrapolate,
    lagrange_interpolate,
)
from ..report import PSNR_IDENTICAL, RunReport, relative_l2
from ..schedule import NoiseSchedule
from ..solver import SadaMode, SamplerConfig, Solver, initial_sample, run_baseline
from ..tokencache import LayerCache, TokenCachePlan, layered_forward, tokenwise_execute
from .config import RunConfig, parse_seeds
from .outputs import ReportWriter

# ---------------------------------------------------------------------------
# construction


def build_schedule(cfg: RunConfig) -> NoiseSchedule:
    return NoiseSchedule(cfg.schedule_kind, cfg.num_train_steps, (cfg.beta_min, cfg.beta_max))


def build_denoiser(cfg: RunConfig, schedule: NoiseSchedule):
    prediction = "velocity" if cfg.solver_kind == "euler-flow" else "epsilon"
    if cfg.denoiser == "gmm":
        gmm = GaussianMixture.random(cfg.gmm_dim, cfg.gmm_components, seed=cfg.gmm_seed,
                                     spread=cfg.gmm_spread, variance=cfg.gmm_variance)
        return GMMDenoiser(gmm, schedule, tuple(cfg.token_grid), prediction=prediction)
    model = TokenModel(cfg.model_layers, cfg.model_tokens, cfg.model_channels, cfg.model_seed)
    return TokenDenoiser(model, schedule, tuple(cfg.token_grid), prediction=prediction)


def _sampler(cfg: RunConfig, seed: int) -> SamplerConfig:
    return SamplerConfig(cfg.solver_kind, cfg.N, seed)


# ---------------------------------------------------------------------------
# paired runs


def _baseline_report(cfg, seed, records, counter, tokens_per_forward, wall) -> RunReport:
    modes = {m.value: 0 for m in SadaMode}
    modes[SadaMode.FRESH.value] = len(records) - 1
    return RunReport(
        nfe_full=counter.full_evals,
        nfe_token_fraction=0.0,
        nfe_equivalent=counter.nfe_equivalent(tokens_per_forward),
        speedup=1.0,
        mode_counts=modes,
        terminal_rel_l2=0.0,
        terminal_psnr_db=PSNR_IDENTICAL,
        per_step_mse=[0.0] * len(records),
        wall_time_s=wall,
    )


def paired_run(cfg: RunConfig, seed: int, params: PolicyParams | None = None, schedule=None,
               denoiser=None, baseline=None):
    """One accelerated run and its same-seed baseline.

    Returns ``(report, records, terminal, baseline)``.  Exceptions inside the
    accelerated run do not propagate: the report is flagged incomplete and
    covers the steps completed before the abort.
    """
    schedule = schedule or build_schedule(cfg)
    denoiser = denoiser or build_denoiser(cfg, schedule)
    params = params or cfg.policy_params()
    sampler = _sampler(cfg, seed)
    if baseline is None:
        baseline = run_baseline(sampler, denoiser, schedule)
    base_records, base_terminal = baseline
    start = time.perf_counter()
    ctl = SadaController(sampler, denoiser, schedule, params)
    try:
        records, terminal = ctl.run()
        error = None
    except Exception as exc:  # noqa: BLE001 - the harness boundary turns any abort into a report
        records, terminal, error = ctl.records, None, f"{type(exc).__name__}: {exc}"
    wall = time.perf_counter() - start
    if error is None:
        report = build_report(records, terminal, base_records, base_terminal, ctl.counter,
                              denoiser.tokens_per_forward, params, wall, cfg.psnr_peak)
        report.extra["stable_fractions"] = [None if r is None else r.stable_fraction
                                            for r in ctl.reports]
    else:
        modes = {m.value: 0 for m in SadaMode}
        for rec in records[1:]:
            modes[rec.mode.value] += 1
        per_step = [float(np.mean((a.x_t - b.x_t) ** 2)) for a, b in zip(records, base_records)]
        report = RunReport(
            nfe_full=ctl.counter.full_evals,
            nfe_token_fraction=ctl.counter.partial_token_evals / denoiser.tokens_per_forward,
            nfe_equivalent=ctl.counter.nfe_equivalent(denoiser.tokens_per_forward),
            speedup=math.nan, mode_counts=modes, terminal_rel_l2=math.nan,
            terminal_psnr_db=math.nan, per_step_mse=per_step, wall_time_s=wall,
            complete=False, error=error, policy=params.__dict__.copy())
    _stamp(report, cfg, seed)
    return report, records, terminal, baseline


def _stamp(report: RunReport, cfg: RunConfig, seed, experiment: str | None = None) -> RunReport:
    report.config_hash = cfg.config_hash()
    report.seed = seed
    report.experiment = experiment or cfg.experiment
    report.solver_kind = cfg.solver_kind
    report.steps = cfg.N
    if not report.policy:
        report.policy = cfg.policy_params().__dict__.copy()
    return report


def _step_rows(report: RunReport, records) -> list[dict]:
    return [{"experiment": report.experiment, "seed": report.seed, "step": r.step, "t": r.t,
             "mode": r.mode.value, "fix_fraction": r.fix_fraction,
             "mse_vs_baseline": report.per_step_mse[i] if i < len(report.per_step_mse) else None}
            for i, r in enumerate(records)]


STEP_COLUMNS = ["experiment", "seed", "step", "t", "mode", "fix_fraction", "mse_vs_baseline"]


# ---------------------------------------------------------------------------
# reconstruction error: Adams-Moulton vs finite differences


def reconstruction_errors(cfg: RunConfig, seed: int, schedule=None, denoiser=None):
    """Per-step data-prediction MSE of the two skip estimators along a baseline run.

    At every step with three past velocities, the next state is estimated
    (Adams-Moulton from velocities, or third-order backward extrapolation
    from states), the current noise prediction is reused, and the implied
    data prediction is compared with the fresh one at the next step.
    Returns ``(times, am_mse, fd_mse)``.
    """
    schedule = schedule or build_schedule(cfg)
    denoiser = denoiser or build_denoiser(cfg, schedule)
    sampler = _sampler(cfg, seed)
    records, _ = run_baseline(sampler, denoiser, schedule)
    grid = schedule.grid(cfg.N)
    solver = Solver(cfg.solver_kind, schedule, grid)
    times, am, fd = [], [], []
    for i in range(2, cfg.N - 1):
        idx = (i, i - 1, i - 2)
        ts = [float(grid.times[j]) for j in idx]
        ys = RingBuffer3.from_values([records[j].y_t for j in idx], ts)
        xs = RingBuffer3.from_values([records[j].x_t for j in idx], ts)
        cur = records[i]
        eps = solver.derive(cur.x_t, cur.eps_or_u, cur.t)[0]
        t_next = float(grid.times[i + 1])
        x_am = adams_moulton_estimate(cur.x_t, ys, grid.dt)
        x_fd = backward_extrapolate(xs, 3)
        target = records[i + 1].x0_t
        am.append(float(np.mean((solver.from_eps(x_am, eps, t_next)[1] - target) ** 2)))
        fd.append(float(np.mean((solver.from_eps(x_fd, eps, t_next)[1] - target) ** 2)))
        times.append(t_next)
    return times, am, fd


def fd_vs_am_table(cfg: RunConfig, seeds) -> tuple[list[dict], np.ndarray, np.ndarray]:
    """Per-step mean and standard deviation over seeds for both estimators."""
    schedule = build_schedule(cfg)
    denoiser = build_denoiser(cfg, schedule)
    am_all, fd_all, times = [], [], None
    for seed in seeds:
        times, am, fd = reconstruction_errors(cfg, seed, schedule, denoiser)
        am_all.append(am)
        fd_all.append(fd)
    am_arr, fd_arr = np.array(am_all), np.array(fd_all)
    return _fd_am_rows(times, am_arr, fd_arr), am_arr, fd_arr


FD_AM_COLUMNS = ["step", "t", "am_mean", "am_std", "fd_mean", "fd_std"]


def _fd_am_rows(times, am_arr, fd_arr) -> list[dict]:
    # column j holds the estimate for grid step j + 3
    return [{"step": j + 3, "t": t, "am_mean": float(am_arr[:, j].mean()),
             "am_std": float(am_arr[:, j].std()), "fd_mean": float(fd_arr[:, j].mean()),
             "fd_std": float(fd_arr[:, j].std())} for j, t in enumerate(times)]


# ---------------------------------------------------------------------------
# token-pruning sweep


def nested_plans(n_tokens: int, fractions, seed: int) -> dict[float, TokenCachePlan]:
    """Random reduce sets, nested so a larger fraction always prunes a superset."""
    order = np.random.default_rng(seed).permutation(n_tokens)
    plans = {}
    for f in fractions:
        k = int(round(f * n_tokens))
        mask = np.zeros(n_tokens, dtype=bool)
        mask[order[:k]] = True
        plans[float(f)] = TokenCachePlan.from_mask(mask)
    return plans


def token_sweep_run(cfg: RunConfig, seed: int, plan: TokenCachePlan, schedule=None,
                    denoiser=None):
    """Sample with a fixed token plan on every step from ``T_star`` on.

    Returns ``(terminal, counter)``.
    """
    schedule = schedule or build_schedule(cfg)
    denoiser = denoiser or build_denoiser(cfg, schedule)
    grid = schedule.grid(cfg.N)
    solver = Solver(cfg.solver_kind, schedule, grid)
    cache = LayerCache.for_model(denoiser, cfg.T_star, cfg.cache_interval)
    counter = EvalCounter()
    x = initial_sample(denoiser.dim, seed, schedule, float(grid.times[0]))
    for i in range(cfg.N):
        t = float(grid.times[i])
        if cache.active(i):
            out = tokenwise_execute(x, plan, cache, denoiser, t, i, counter=counter)
        else:
            out = layered_forward(denoiser, x, t, counter=counter)
        _, y, x0 = solver.derive(x, out, t)
        x = solver.step(i, x, y, x0)
    return x, counter


# ---------------------------------------------------------------------------
# convergence battery

BATTERY = {
    "sin": (np.sin, np.cos),
    "exp": (np.exp, np.exp),
    "poly": (lambda t: t ** 3 - 2 * t ** 2 + t, lambda t: 3 * t ** 2 - 4 * t + 1),
    "linear": (lambda t: 2.0 * t + 1.0, lambda t: 2.0 + 0.0 * t),
}
EXACT_FLOOR = 1e-13


def scheme_error(scheme: str, fn: str, h: float, t0: float = 0.5, nodes: int = 4,
                 offset: float = 0.5) -> float:
    """Absolute error of one scheme on one battery function at spacing ``h``.

    Samples sit at ``t0, t0 + h, ...`` (newest first, time decreasing along
    the run).  Adams-Moulton and backward extrapolation predict ``x(t0 - h)``;
    the Lagrange scheme with ``nodes`` nodes predicts ``x(t0 - offset * h)``.
    """
    x, y = BATTERY[fn]
    ts = [t0 + j * h for j in range(max(3, nodes))]
    if scheme == "adams-moulton":
        grads = RingBuffer3.from_values([np.array([y(t)]) for t in ts[:3]], ts[:3])
        est = adams_moulton_estimate(np.array([x(t0)]), grads, h)[0]
        return abs(est - x(t0 - h))
    if scheme == "backward-extrap":
        hist = RingBuffer3.from_values([np.array([x(t)]) for t in ts[:3]], ts[:3])
        return abs(backward_extrapolate(hist, 3)[0] - x(t0 - h))
    if scheme == "lagrange-k":
        buf = LagrangeBuffer(nodes)
        for t in reversed(ts[:nodes]):
            buf.push(t, np.array([x(t)]))
        t_eval = t0 - offset * h
        return abs(lagrange_interpolate(buf, t_eval)[0] - x(t_eval))
    raise ValueError(f"unknown scheme {scheme!r}")


def fitted_order(hs, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(h)``; NaN when the scheme is exact."""
    hs, errors = np.asarray(hs, float), np.asarray(errors, float)
    keep = errors > EXACT_FLOOR
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(hs[keep]), np.log(errors[keep]), 1)[0])


def convergence_study(scheme: str, resolutions, functions=("sin", "exp", "poly"), nodes: int = 4,
                      t0: float = 0.5):
    """Errors and observed orders of ``scheme`` on the analytic battery.

    Returns ``(rows, slopes)``: one row per ``(function, h)`` with the
    pairwise observed order against the previous resolution, and the fitted
    log-log slope per function.
    """
    hs = [float(h) for h in resolutions]
    if len(hs) < 3:
        raise ValueError("need at least 3 resolutions")
    if any(abs(2 * hs[i + 1] - hs[i]) > 1e-12 * hs[i] for i in range(len(hs) - 1)):
        raise ValueError("each resolution must halve the previous one")
    rows, slopes = [], {}
    for fn in functions:
        errs = [scheme_error(scheme, fn, h, t0, nodes) for h in hs]
        for i, (h, e) in enumerate(zip(hs, errs)):
            order = None
            if i and e > EXACT_FLOOR and errs[i - 1] > EXACT_FLOOR:
                order = math.log(errs[i - 1] / e) / math.log(hs[i - 1] / h)
            rows.append({"scheme": scheme, "function": fn, "nodes": nodes, "h": h, "error": e,
                         "observed_order": order})
        slopes[fn] = fitted_order(hs, errs)
    return rows, slopes


# ---------------------------------------------------------------------------
# sign relation between velocity curvature and state third difference


def sign_relation_rate(dt: float = 1e-2, n_traj: int = 20, dim: int = 8, seed: int = 0) -> dict:
    """Fraction of interior steps with ``mean(D2 y_t * D3 x_{t-1}) < 0`` on smooth trajectories.

    Each trajectory coordinate is ``a sin(w t + p) + b exp(c t)`` sampled on
    a decreasing uniform grid over ``[0, 1]``; ``y`` is its exact derivative.
    """
    rng = np.random.default_rng(seed)
    times = np.arange(1.0, -1e-12, -dt)
    neg = total = el_neg = el_total = 0
    for _ in range(n_traj):
        a, w, p = rng.uniform(0.5, 1.5, dim), rng.uniform(0.5, 3.0, dim), rng.uniform(0, 2 * np.pi, dim)
        b, c = rng.uniform(-0.5, 0.5, dim), rng.uniform(-1.0, 1.0, dim)
        tt = times[:, None]
        x = a * np.sin(w * tt + p) + b * np.exp(c * tt)
        y = a * w * np.cos(w * tt + p) + b * c * np.exp(c * tt)
        for i in range(2, len(times) - 1):
            d2y = y[i] - 2 * y[i - 1] + y[i - 2]
            d3x = x[i + 1] - 3 * x[i] + 3 * x[i - 1] - x[i - 2]
            prod = d2y * d3x
            neg += prod.mean() < 0
            total += 1
            el_neg += int((prod < 0).sum())
            el_total += prod.size
    return {"rate": neg / total, "elementwise_rate": el_neg / el_total, "steps": total, "dt": dt}


# ---------------------------------------------------------------------------
# policy head-to-head


def aggregate_speedup(reports) -> float:
    """Total baseline evaluations over total accelerated evaluation-equivalents."""
    base = sum(r.steps for r in reports)
    acc = sum(r.nfe_equivalent for r in reports)
    return base / acc if acc > 0 else math.inf


def summarize(reports) -> dict:
    done = [r for r in reports if r.complete]
    rel = np.array([r.terminal_rel_l2 for r in done], dtype=float)
    psnr = np.array([r.terminal_psnr_db for r in done if r.terminal_psnr_db != PSNR_IDENTICAL])
    return {
        "runs": len(reports),
        "complete": len(done),
        "mean_rel_l2": float(rel.mean()) if rel.size else math.nan,
        "median_rel_l2": float(np.median(rel)) if rel.size else math.nan,
        "mean_psnr_db": float(psnr.mean()) if psnr.size else math.inf,
        "identical_runs": len(done) - len(psnr),
        "speedup": aggregate_speedup(done) if done else math.nan,
        "mean_seed_speedup": float(np.mean([r.speedup for r in done])) if done else math.nan,
    }


def run_policy(cfg: RunConfig, seeds, params: PolicyParams, baselines=None, schedule=None,
               denoiser=None, workers: int | None = None):
    """Paired runs for every seed; returns ``(reports, records_per_seed)``."""
    schedule = schedule or build_schedule(cfg)
    denoiser = denoiser or build_denoiser(cfg, schedule)
    baselines = baselines or {}

    def one(seed):
        rep, recs, _, _ = paired_run(cfg, seed, params, schedule, denoiser, baselines.get(seed))
        return rep, recs

    with ThreadPoolExecutor(max_workers=workers or cfg.workers) as pool:
        out = list(pool.map(one, seeds))
    return [o[0] for o in out], [o[1] for o in out]


def tune_eq5_tau(cfg: RunConfig, seeds, target_speedup: float, baselines=None, rel_tol=0.05,
                 lo: float = -0.05, hi: float = 1.0, max_iter: int = 40):
    """Bisect the comparison policy's threshold until its aggregate speedup is
    within ``rel_tol`` of ``target_speedup``.

    Returns ``(tau, reports, matched)``; when no threshold lands inside the
    window the closest one found is returned with ``matched=False``.
    """
    schedule = build_schedule(cfg)
    denoiser = build_denoiser(cfg, schedule)
    base = cfg.policy_params()

    def speed(tau):
        reps, _ = run_policy(cfg, seeds, replace(base, policy="eq5", tau=tau), baselines,
                             schedule, denoiser)
        return aggregate_speedup(reps), reps

    best = None
    s_lo, r_lo = speed(lo)
    s_hi, r_hi = speed(hi)
    for tau, s, reps in ((lo, s_lo, r_lo), (hi, s_hi, r_hi)):
        best = _closer(best, (tau, s, reps), target_speedup)
    if not s_lo <= target_speedup <= s_hi:
        tau, s, reps = best
        return tau, reps, abs(s / target_speedup - 1) <= rel_tol
    for _ in range(max_iter):
        tau, s, reps = best
        if abs(s / target_speedup - 1) <= rel_tol:
            return tau, reps, True
        mid = 0.5 * (lo + hi)
        s_mid, r_mid = speed(mid)
        best = _closer(best, (mid, s_mid, r_mid), target_speedup)
        if s_mid < target_speedup:
            lo = mid
        else:
            hi = mid
    tau, s, reps = best
    return tau, reps, abs(s / target_speedup - 1) <= rel_tol


def _closer(best, cand, target):
    if best is None or abs(cand[1] - target) < abs(best[1] - target):
        return cand
    return best


def compare_policies(cfg: RunConfig, seeds=None, match_nfe: bool = True) -> dict:
    """SADA against the comparison policy, optionally at matched NFE reduction."""
    seeds = parse_seeds(seeds if seeds is not None else cfg.seeds)
    schedule = build_schedule(cfg)
    denoiser = build_denoiser(cfg, schedule)
    baselines = {s: run_baseline(_sampler(cfg, s), denoiser, schedule) for s in seeds}
    sada_params = replace(cfg.policy_params(), policy="sada")
    sada_reports, _ = run_policy(cfg, seeds, sada_params, baselines, schedule, denoiser)
    target = aggregate_speedup(sada_reports)
    if match_nfe:
        tau, eq5_reports, matched = tune_eq5_tau(cfg, seeds, target, baselines)
    else:
        tau = cfg.tau
        eq5_reports, _ = run_policy(cfg, seeds, replace(cfg.policy_params(), policy="eq5"),
                                    baselines, schedule, denoiser)
        matched = abs(aggregate_speedup(eq5_reports) / target - 1) <= 0.05
    for r in sada_reports:
        _stamp(r, cfg, r.seed, "sada")
    for r in eq5_reports:
        _stamp(r, cfg, r.seed, "eq5")
    return {"sada": summarize(sada_reports), "eq5": summarize(eq5_reports), "tau": tau,
            "matched": matched, "sada_reports": sada_reports, "eq5_reports": eq5_reports}


# ---------------------------------------------------------------------------
# top-level dispatcher


def run_experiment(cfg: RunConfig, writer: ReportWriter | None = None, dump_vectors=None):
    """Execute ``cfg`` for every seed and write JSON-lines reports plus CSV tables.

    Returns the list of :class:`RunReport`.
    """
    writer = writer or ReportWriter(cfg.output_dir)
    dump = cfg.dump_vectors if dump_vectors is None else dump_vectors
    seeds = parse_seeds(cfg.seeds)
    exp = cfg.experiment
    if exp == "convergence":
        return _run_convergence(cfg, writer)
    schedule = build_schedule(cfg)
    denoiser = build_denoiser(cfg, schedule)
    if exp == "fd-vs-am":
        return _run_fd_vs_am(cfg, seeds, writer, schedule, denoiser)
    if exp == "token-sweep":
        return _run_token_sweep(cfg, seeds, writer, schedule, denoiser)

    def one(seed):
        if exp == "baseline":
            counter = EvalCounter()
            start = time.perf_counter()
            records, terminal = run_baseline(_sampler(cfg, seed), denoiser, schedule, counter)
            rep = _baseline_report(cfg, seed, records, counter, denoiser.tokens_per_forward,
                                   time.perf_counter() - start)
            return _stamp(rep, cfg, seed), records, terminal, terminal
        params = cfg.policy_params()
        if exp == "eq5":
            params = replace(params, policy="eq5")
        rep, records, terminal, (_, base_terminal) = paired_run(cfg, seed, params, schedule,
                                                                denoiser)
        return rep, records, terminal, base_terminal

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        results = list(pool.map(one, seeds))
    reports = [r[0] for r in results]
    writer.write_reports(reports)
    rows = [row for rep, recs, _, _ in results for row in _step_rows(rep, recs)]
    writer.write_table("steps.csv", rows, STEP_COLUMNS)
    if dump:
        for rep, _, terminal, base_terminal in results:
            meta = {"seed": rep.seed, "config_hash": rep.config_hash, "experiment": exp}
            if terminal is not None:
                writer.dump_vector(f"{exp}_seed{rep.seed}_terminal.f64", terminal,
                                   dict(meta, kind="terminal"))
            writer.dump_vector(f"baseline_seed{rep.seed}_terminal.f64", base_terminal,
                               dict(meta, kind="baseline-terminal"))
    return reports


def _blank_report(cfg: RunConfig, seed, experiment: str) -> RunReport:
    rep = RunReport(nfe_full=0, nfe_token_fraction=0.0, nfe_equivalent=0.0, speedup=math.nan,
                    mode_counts={}, terminal_rel_l2=math.nan, terminal_psnr_db=math.nan,
                    per_step_mse=[], wall_time_s=0.0)
    return _stamp(rep, cfg, seed, experiment)


def _run_convergence(cfg: RunConfig, writer: ReportWriter):
    start = time.perf_counter()
    rows, slopes = convergence_study(cfg.scheme, cfg.resolutions, nodes=cfg.lagrange_nodes)
    writer.write_table("convergence.csv", rows,
                       ["scheme", "function", "nodes", "h", "error", "observed_order"])
    rep = _blank_report(cfg, None, "convergence")
    rep.wall_time_s = time.perf_counter() - start
    rep.extra = {"scheme": cfg.scheme, "slopes": slopes, "resolutions": list(cfg.resolutions)}
    writer.write_reports([rep])
    return [rep]


def _run_fd_vs_am(cfg, seeds, writer, schedule, denoiser):
    reports, am_all, fd_all, times = [], [], [], []
    for seed in seeds:
        start = time.perf_counter()
        times, am, fd = reconstruction_errors(cfg, seed, schedule, denoiser)
        rep = _blank_report(cfg, seed, "fd-vs-am")
        rep.nfe_full = cfg.N
        rep.nfe_equivalent = float(cfg.N)
        rep.wall_time_s = time.perf_counter() - start
        rep.extra = {"am_mse": am, "fd_mse": fd}
        reports.append(rep)
        am_all.append(am)
        fd_all.append(fd)
    rows = _fd_am_rows(times, np.array(am_all), np.array(fd_all))
    writer.write_table("fd_vs_am.csv", rows, FD_AM_COLUMNS)
    writer.write_reports(reports)
    return reports


def _run_token_sweep(cfg, seeds, writer, schedule, denoiser):
    reports, rows = [], []
    for seed in seeds:
        _, base_terminal = run_baseline(_sampler(cfg, seed), denoiser, schedule)
        for f, plan in nested_plans(denoiser.n_tokens, cfg.reduce_fractions, seed).items():
            start = time.perf_counter()
            terminal, counter = token_sweep_run(cfg, seed, plan, schedule, denoiser)
            rep = _blank_report(cfg, seed, "token-sweep")
            rep.nfe_full = counter.full_evals
            rep.nfe_equivalent = counter.nfe_equivalent(denoiser.tokens_per_forward)
            rep.nfe_token_fraction = counter.partial_token_evals / denoiser.tokens_per_forward
            rep.speedup = cfg.N / rep.nfe_equivalent
            rep.terminal_rel_l2 = relative_l2(terminal, base_terminal)
            rep.wall_time_s = time.perf_counter() - start
            rep.extra = {"reduce_fraction": f, "fix_fraction": plan.fix_fraction}
            reports.append(rep)
            rows.append({"seed": seed, "reduce_fraction": f, "terminal_rel_l2": rep.terminal_rel_l2,
                         "nfe_equivalent": rep.nfe_equivalent})
    writer.write_table("token_sweep.csv", rows,
                       ["seed", "reduce_fraction", "terminal_rel_l2", "nfe_equivalent"])
    writer.write_reports(reports)
    return reports
