import numpy as np
import pytest

from sada.controller import (
    MultistepState,
    PolicyParams,
    SadaController,
    StabilityReport,
    eq5_baseline_criterion,
    eq5_statistic,
    evaluate_criterion,
    finite_difference_approximate,
    multistep_interpolate,
    multistep_update,
    sada_run,
    stepwise_approximate,
)
from sada.denoiser import LinearFieldDenoiser
from sada.errors import DegenerateNormError, NotEnoughHistoryError
from sada.numerics import RingBuffer3
from sada.solver import SadaMode, SamplerConfig, Solver, run_baseline


def rb(values, t0=0.5, h=0.1):
    return RingBuffer3.from_values([np.atleast_1d(np.asarray(v, float)) for v in values],
                                   [t0 + i * h for i in range(len(values))])


def verdict(stable):
    return StabilityReport(np.zeros(1), -1.0 if stable else 1.0, float(stable), stable)


@pytest.fixture
def linear_flow(flow):
    def make(rate):
        return LinearFieldDenoiser(np.linspace(-1, 1, 8), flow, rate=rate)
    return make


# -- criterion ------------------------------------------------------------------

def test_criterion_sign_convention():
    grads = rb([[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])  # second difference = (1, 1)
    stable = evaluate_criterion(np.array([0.0, 0.0]), np.array([0.5, 0.1]), grads)
    assert stable.is_stable and stable.scalar_stat == pytest.approx(-0.3)
    unstable = evaluate_criterion(np.array([0.5, 0.1]), np.array([0.0, 0.0]), grads)
    assert not unstable.is_stable


def test_all_zero_signal_is_unstable():
    grads = rb([[0.0, 0.0]] * 3)
    rep = evaluate_criterion(np.array([1.0, 2.0]), np.array([0.0, 0.0]), grads)
    assert rep.scalar_stat == 0.0 and not rep.is_stable
    assert not evaluate_criterion(np.zeros(2), np.zeros(2), grads, reduction="majority").is_stable


def test_majority_reduction_differs_from_mean():
    grads = rb([[1.0, 1.0, 1.0], [0.0] * 3, [0.0] * 3])
    # two small negative entries, one large positive
    rep_mean = evaluate_criterion(np.zeros(3), np.array([0.1, 0.1, -5.0]), grads)
    rep_maj = evaluate_criterion(np.zeros(3), np.array([0.1, 0.1, -5.0]), grads, "majority")
    assert not rep_mean.is_stable and rep_maj.is_stable
    assert rep_maj.stable_fraction == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        evaluate_criterion(np.zeros(3), np.zeros(3), grads, "median")


def test_criterion_needs_three_gradients():
    with pytest.raises(NotEnoughHistoryError):
        evaluate_criterion(np.zeros(1), np.zeros(1), rb([[1.0], [1.0]]))


# -- approximations --------------------------------------------------------------

def test_stepwise_and_fd_approximations(vp, rng):
    solver = Solver("euler-pfode", vp, vp.grid(10))
    eps = rng.standard_normal(3)
    grads = rb([rng.standard_normal(3) for _ in range(3)])
    x = rng.standard_normal(3)
    x_hat, e_hat, x0_hat = stepwise_approximate(x, grads, eps, 0.1, 0.4, solver)
    assert e_hat is not None and np.array_equal(e_hat, eps)
    np.testing.assert_allclose(x0_hat, vp.data_prediction(x_hat, eps, 0.4))
    states = rb([[3.0], [2.0], [1.0]])
    fd_hat, _, _ = finite_difference_approximate(states, np.zeros(1), 0.4, solver)
    assert fd_hat[0] == pytest.approx(4.0)


# -- comparison statistic ------------------------------------------------------------

def test_eq5_statistic_frozen():
    states = rb([[3.0], [1.0], [0.0]])
    # d0 = |6 - 3| = 3, d1 = 2, d2 = 1 -> ((1 + 3)/2 - 2)/2 = 0
    assert eq5_statistic(states, np.array([6.0])) == 0.0
    assert eq5_baseline_criterion(states, np.array([6.0]), tau=0.0)
    assert not eq5_baseline_criterion(states, np.array([7.0]), tau=0.0)


def test_eq5_guards():
    with pytest.raises(DegenerateNormError):
        eq5_statistic(rb([[1.0], [1.0], [0.0]]), np.array([2.0]))
    with pytest.raises(NotEnoughHistoryError):
        eq5_baseline_criterion(rb([[1.0], [0.0]]), np.array([2.0]), 0.1)


# -- multistep gate ---------------------------------------------------------------

def test_alternating_verdicts_never_enter_multistep():
    st = MultistepState(4, 4)
    for i in range(40):
        st, _ = multistep_update(st, verdict(i % 2 == 0), i, 1 - i / 40, x0_fresh=np.array([i * 1.0]))
        assert not st.entered


def test_multistep_enters_after_m_stable_with_full_buffer():
    st = MultistepState(4, 4)
    entered_at = None
    for i in range(20):
        st, action = multistep_update(st, verdict(True), i, 1 - i / 20, x0_fresh=np.array([float(i)]))
        if i % 4 == 0:
            assert action == "cache-node"
        if st.entered and entered_at is None:
            entered_at = i
    # the fourth node lands at step 12 after that step's verdict was counted; entry follows at 13
    assert entered_at == 13
    st, action = multistep_update(st, None, 21, 0.0, x0_fresh=None)
    assert action == "interpolate"
    # nodes hold x0 = step index on a linear time grid, so interpolation is exact
    assert multistep_interpolate(st, 1 - 21 / 20)[0] == pytest.approx(21.0)
    st, _ = multistep_update(st, verdict(False), 22, -0.1, x0_fresh=np.array([22.0]))
    assert not st.entered and st.consecutive_stable == 0


def test_multistep_disabled_gate():
    st = MultistepState(2, 1)
    for i in range(10):
        st, _ = multistep_update(st, verdict(True), i, 1 - i / 10, np.array([0.0]), enabled=False)
    assert not st.entered


def test_interpolate_needs_nodes():
    with pytest.raises(NotEnoughHistoryError):
        multistep_interpolate(MultistepState(4, 4), 0.5)


# -- controller runs ------------------------------------------------------------------

def test_policy_none_reproduces_baseline(gmm_den, vp):
    cfg = SamplerConfig("euler-pfode", 20, seed=4)
    recs, term, rep = sada_run(cfg, gmm_den, vp, PolicyParams(policy="none"))
    base = run_baseline(cfg, gmm_den, vp)
    np.testing.assert_array_equal(term, base[1])
    assert rep.terminal_rel_l2 == 0.0 and rep.speedup == 1.0
    assert rep.mode_counts["Fresh"] == 19


@pytest.mark.parametrize("kind", ["euler-pfode", "dpmpp-2m"])
def test_force_fresh_is_bit_exact(gmm_den, vp, kind):
    cfg = SamplerConfig(kind, 25, seed=1)
    _, term, rep = sada_run(cfg, gmm_den, vp, PolicyParams(force_mode="fresh"))
    assert rep.terminal_rel_l2 == 0.0
    assert rep.mode_counts == {"Fresh": 24, "StepWise": 0, "MultistepWise": 0, "TokenWise": 0}


@pytest.mark.parametrize("kind,sched", [("euler-pfode", "vp"), ("dpmpp-2m", "vp"), ("euler-flow", "flow")])
@pytest.mark.parametrize("n", [6, 15, 50])
def test_mode_counts_cover_all_steps(request, kind, sched, n, gmm):
    from sada.denoiser import GMMDenoiser
    s = request.getfixturevalue(sched)
    den = GMMDenoiser(gmm, s, (4, 4), prediction="velocity" if s.is_flow else "epsilon")
    _, _, rep = sada_run(SamplerConfig(kind, n, seed=0), den, s)
    assert sum(rep.mode_counts.values()) == n - 1
    assert len(rep.per_step_mse) == n
    assert rep.nfe_equivalent <= n
    if n < 7:
        assert rep.mode_counts["MultistepWise"] == 0


def test_final_step_is_fresh(gmm_den, vp):
    recs, _, _ = sada_run(SamplerConfig("euler-pfode", 30, seed=2), gmm_den, vp)
    assert recs[-1].mode == SadaMode.FRESH
    assert all(r.mode == SadaMode.FRESH for r in recs[:3])


def test_contracting_field_never_prunes(linear_flow, flow):
    den = linear_flow(1.0)
    ctl = SadaController(SamplerConfig("euler-flow", 30), den, flow)
    recs, _ = ctl.run()
    # every verdict that can still steer a later step is stable; the one at the
    # penultimate step is ignored because the final step is always fresh
    assert all(r is None or r.is_stable for r in ctl.reports[:-2])
    modes = {r.mode for r in recs}
    assert SadaMode.TOKEN_WISE not in modes
    assert SadaMode.STEP_WISE in modes and SadaMode.MULTISTEP_WISE in modes


def test_forced_stable_never_prunes(linear_flow, flow):
    den = linear_flow(-1.0)  # expanding field: the raw criterion says unstable everywhere
    recs, _, _ = sada_run(SamplerConfig("euler-flow", 30), den, flow, PolicyParams(force_mode="stable"))
    assert SadaMode.TOKEN_WISE not in {r.mode for r in recs}


def test_forced_unstable_only_fresh_or_tokenwise(gmm_den, vp):
    recs, _, rep = sada_run(SamplerConfig("euler-pfode", 30), gmm_den, vp, PolicyParams(force_mode="unstable"))
    assert rep.mode_counts["StepWise"] == rep.mode_counts["MultistepWise"] == 0
    assert rep.mode_counts["TokenWise"] > 0


def test_history_replays_solver_updates(gmm_den, vp):
    """Each logged (x, y) pair reproduces the next state, except where a StepWise
    step replaces that state by its Adams-Moulton estimate."""
    ctl = SadaController(SamplerConfig("euler-pfode", 40, seed=6), gmm_den, vp)
    recs, term = ctl.run()
    states = [r.x_t for r in recs] + [term]
    replayed = 0
    for i, (x, y, _) in enumerate(ctl.history_log):
        if i + 1 < len(recs) and recs[i + 1].mode == SadaMode.STEP_WISE:
            continue
        np.testing.assert_allclose(x - ctl.grid.dt * y, states[i + 1], rtol=1e-12, atol=1e-12)
        replayed += 1
    assert 0 < replayed < len(recs)


def test_stepwise_state_is_am_estimate(gmm_den, vp):
    from sada.numerics import adams_moulton_estimate
    ctl = SadaController(SamplerConfig("euler-pfode", 40, seed=6), gmm_den, vp)
    recs, _ = ctl.run()
    checked = 0
    for i, rec in enumerate(recs):
        if rec.mode == SadaMode.STEP_WISE:
            prev = recs[i - 1]
            grads = RingBuffer3.from_values([recs[i - 1 - k].y_t for k in range(3)],
                                            [recs[i - 1 - k].t for k in range(3)])
            np.testing.assert_allclose(rec.x_t, adams_moulton_estimate(prev.x_t, grads, ctl.grid.dt),
                                       rtol=1e-12, atol=1e-12)
            np.testing.assert_array_equal(rec.eps_or_u, prev.eps_or_u)
            checked += 1
    assert checked > 0


def test_eq5_policy_respects_skip_cap(gmm_den, vp):
    p = PolicyParams(policy="eq5", tau=10.0, max_consecutive_skips=3)
    recs, _, rep = sada_run(SamplerConfig("euler-pfode", 40), gmm_den, vp, p)
    run = longest = 0
    for r in recs:
        run = run + 1 if r.mode == SadaMode.STEP_WISE else 0
        longest = max(longest, run)
    assert longest == 3
    assert recs[-1].mode == SadaMode.FRESH
    assert rep.policy["tau"] == 10.0


def test_abort_keeps_prefix(gmm_den, vp):
    class Boom(type(gmm_den)):
        calls = 0

        def layer(self, index, h, t, tokens):
            Boom.calls += 1
            if Boom.calls > 5:
                raise FloatingPointError("boom")
            return super().layer(index, h, t, tokens)

    den = Boom(gmm_den.gmm, vp, (4, 4))
    ctl = SadaController(SamplerConfig("euler-pfode", 20), den, vp)
    with pytest.raises(FloatingPointError):
        ctl.run()
    assert len(ctl.records) == 5


def test_policy_params_violations():
    bad = PolicyParams(policy="x", criterion_reduction="y", M=0, r=1, lagrange_nodes=1, T_star=-1,
                       cache_interval=0, token_stat="z", force_mode="w", max_consecutive_skips=0)
    assert len(bad.violations()) == 10
    assert PolicyParams().violations() == []
