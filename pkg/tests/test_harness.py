import json
import math

import numpy as np
import pytest
import yaml

from sada.errors import ConfigValidationError
from sada.harness import (
    RunConfig,
    from_mapping,
    load_config,
    parse_seeds,
    run_experiment,
    summarize,
    validate,
)
from sada.harness import cli, experiments
from sada.harness.experiments import (
    aggregate_speedup,
    convergence_study,
    fitted_order,
    nested_plans,
    paired_run,
    scheme_error,
)
from sada.harness.outputs import dumps_report, jsonable, read_reports, read_vector, write_vector


def small(**kw):
    base = dict(N=12, gmm_dim=16, gmm_components=3, token_grid=[2, 2], seeds=[0, 1])
    base.update(kw)
    return from_mapping(base)


# -- config ---------------------------------------------------------------------------

@pytest.mark.parametrize("value,expected", [
    ("0-3", [0, 1, 2, 3]),
    ("1,4,7", [1, 4, 7]),
    ("2,5-6", [2, 5, 6]),
    (3, [3]),
    ([9, 2], [9, 2]),
])
def test_parse_seeds(value, expected):
    assert parse_seeds(value) == expected


@pytest.mark.parametrize("value", ["3-1", "a", "", -1, [1.5]])
def test_parse_seeds_rejects(value):
    with pytest.raises(ValueError):
        parse_seeds(value)


def test_validation_lists_every_violation():
    with pytest.raises(ConfigValidationError) as exc:
        from_mapping({"N": 2, "solver_kind": "euler-flow", "policy": "fast", "gmm_variance": -1.0,
                      "token_grid": [3, 3], "M": 0})
    v = exc.value.violations
    assert len(v) >= 6
    joined = "\n".join(v)
    for key in ("N", "euler-flow", "policy", "gmm_variance", "token_grid", "M"):
        assert key in joined


def test_unknown_keys_rejected():
    with pytest.raises(ConfigValidationError) as exc:
        from_mapping({"stepz": 10})
    assert "stepz" in exc.value.violations[0]


def test_default_config_is_valid():
    assert validate(RunConfig()) == []


def test_config_hash_stable_and_sensitive():
    a, b = RunConfig(), RunConfig(output_dir="elsewhere", workers=4, dump_vectors=False)
    assert a.config_hash() == b.config_hash()
    assert len(a.config_hash()) == 64
    assert RunConfig(N=51).config_hash() != a.config_hash()
    assert RunConfig(tau=0.02).config_hash() != a.config_hash()


def test_load_yaml_and_json(tmp_path):
    (tmp_path / "c.yaml").write_text(yaml.safe_dump({"N": 20, "seeds": "0-2"}))
    (tmp_path / "c.json").write_text(json.dumps({"N": 20, "seeds": "0-2"}))
    ya, js = load_config(tmp_path / "c.yaml"), load_config(tmp_path / "c.json")
    assert ya.N == 20 and ya.config_hash() == js.config_hash()
    with pytest.raises(ConfigValidationError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigValidationError):
        load_config(tmp_path / "list.yaml")


def test_policy_params_round_trip():
    cfg = small(M=2, tau=0.3, force_mode="stable")
    p = cfg.policy_params()
    assert (p.M, p.tau, p.force_mode) == (2, 0.3, "stable")


# -- outputs -----------------------------------------------------------------------------

def test_jsonable_maps_non_finite_to_null():
    out = jsonable({"a": math.inf, "b": [np.float64(1.5), math.nan], "c": np.arange(2)})
    assert out == {"a": None, "b": [1.5, None], "c": [0, 1]}


def test_vector_round_trip_little_endian(tmp_path):
    v = np.array([1.0, -2.5, 3e-300, np.pi])
    path = tmp_path / "v.f64"
    sidecar = write_vector(path, v, {"seed": 3})
    assert sidecar == tmp_path / "v.f64.json"
    raw = path.read_bytes()
    assert len(raw) == 32
    assert raw[:8] == bytes.fromhex("000000000000f03f")  # 1.0 as little-endian binary64
    np.testing.assert_array_equal(np.frombuffer(raw, dtype="<f8"), v)
    side = json.loads(sidecar.read_text())
    assert side["dtype"] == "float64" and side["byteorder"] == "little" and side["shape"] == [4]
    assert side["seed"] == 3 and side["file"] == "v.f64"
    np.testing.assert_array_equal(read_vector(path), v)


def test_reports_identical_apart_from_wall_time(tmp_path):
    cfg = small(output_dir=str(tmp_path))
    r1 = paired_run(cfg, 0)[0]
    r2 = paired_run(cfg, 0)[0]
    assert dumps_report(r1, drop=("wall_time_s",)) == dumps_report(r2, drop=("wall_time_s",))
    assert r1.config_hash == cfg.config_hash()
    assert r1.policy["M"] == cfg.M and r1.policy["tau"] == cfg.tau


def test_run_experiment_writes_outputs(tmp_path):
    cfg = small(output_dir=str(tmp_path))
    reports = run_experiment(cfg)
    assert [r.seed for r in reports] == [0, 1]
    rows = read_reports(tmp_path)
    assert len(rows) == 2 and rows[0]["config_hash"] == cfg.config_hash()
    steps = (tmp_path / "steps.csv").read_text().splitlines()
    assert steps[0].startswith("experiment,seed,step") and len(steps) == 1 + 2 * 12
    term = read_vector(tmp_path / "vectors" / "sada_seed1_terminal.f64")
    assert term.shape == (16,)


def test_workers_do_not_change_results(tmp_path):
    one = run_experiment(small(seeds=[0, 1, 2], output_dir=str(tmp_path / "a")))
    many = run_experiment(small(seeds=[0, 1, 2], workers=3, output_dir=str(tmp_path / "b")))
    for a, b in zip(one, many):
        assert dumps_report(a, drop=("wall_time_s",)) == dumps_report(b, drop=("wall_time_s",))


def test_baseline_experiment(tmp_path):
    reps = run_experiment(small(experiment="baseline", output_dir=str(tmp_path)), dump_vectors=False)
    assert all(r.mode_counts["Fresh"] == 11 and r.speedup == 1.0 for r in reps)
    assert all(r.terminal_rel_l2 == 0.0 for r in reps)
    assert not (tmp_path / "vectors").exists()


def test_eq5_experiment_echoes_policy(tmp_path):
    reps = run_experiment(small(experiment="eq5", tau=0.05, output_dir=str(tmp_path)))
    assert all(r.policy["policy"] == "eq5" and r.policy["tau"] == 0.05 for r in reps)


def test_fd_vs_am_and_token_sweep(tmp_path):
    run_experiment(small(experiment="fd-vs-am", output_dir=str(tmp_path / "f")))
    header = (tmp_path / "f" / "fd_vs_am.csv").read_text().splitlines()[0]
    assert header == "step,t,am_mean,am_std,fd_mean,fd_std"
    reps = run_experiment(small(experiment="token-sweep", seeds=[0], reduce_fractions=[0.0, 0.5],
                                output_dir=str(tmp_path / "t")))
    assert [r.extra["reduce_fraction"] for r in reps] == [0.0, 0.5]
    assert reps[0].terminal_rel_l2 == 0.0
    assert reps[1].speedup > 1.0


def test_nested_plans_are_nested():
    plans = nested_plans(16, [0.0, 0.25, 0.5], seed=1)
    assert len(plans[0.0].reduce) == 0 and len(plans[0.5].reduce) == 8
    assert set(plans[0.25].reduce) <= set(plans[0.5].reduce)


def test_summary_and_aggregate_speedup():
    cfg = small()
    reps = [paired_run(cfg, s)[0] for s in (0, 1)]
    agg = aggregate_speedup(reps)
    assert agg == pytest.approx(sum(r.steps for r in reps) / sum(r.nfe_equivalent for r in reps))
    s = summarize(reps)
    assert s["runs"] == 2 and s["speedup"] == pytest.approx(agg)


def test_paired_run_abort_gives_partial_report(monkeypatch):
    cfg = small()
    schedule = experiments.build_schedule(cfg)
    den = experiments.build_denoiser(cfg, schedule)
    base = experiments.run_baseline(experiments._sampler(cfg, 0), den, schedule)
    real = type(den).layer
    calls = {"n": 0}

    def flaky(self, index, h, t, tokens):
        calls["n"] += 1
        if calls["n"] > 5:
            raise FloatingPointError("simulated overflow")
        return real(self, index, h, t, tokens)

    monkeypatch.setattr(type(den), "layer", flaky)
    rep = paired_run(cfg, 0, schedule=schedule, denoiser=den, baseline=base)[0]
    assert not rep.complete and "simulated overflow" in rep.error
    assert 0 < len(rep.per_step_mse) < cfg.N


# -- convergence helpers ------------------------------------------------------------------

def test_fitted_order_of_exact_power_law():
    hs = np.array([0.1, 0.05, 0.025])
    assert fitted_order(hs, 3.0 * hs ** 2) == pytest.approx(2.0)
    assert math.isnan(fitted_order(hs, np.zeros(3)))


def test_am_on_linear_is_exact():
    assert scheme_error("adams-moulton", "linear", 1e-2) < 1e-13


def test_convergence_study_orders():
    _, slopes = convergence_study("adams-moulton", [1e-2, 5e-3, 2.5e-3], functions=("sin", "exp"))
    assert all(2.7 <= s <= 3.3 for s in slopes.values())
    _, slopes = convergence_study("lagrange-k", [4e-2, 2e-2, 1e-2], functions=("sin",), nodes=4)
    assert slopes["sin"] == pytest.approx(4.0, abs=0.3)


# -- CLI ----------------------------------------------------------------------------------------

def write_cfg(tmp_path, **kw):
    data = dict(N=12, gmm_dim=16, gmm_components=3, token_grid=[2, 2])
    data.update(kw)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def test_cli_run_and_report(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--seeds", "0-1", "--out", str(out)]) == 0
    rows = read_reports(out / "reports.jsonl")
    assert [r["seed"] for r in rows] == [0, 1]
    assert cli.main(["report", str(out)]) == 0
    assert "sada" in capsys.readouterr().out


def test_cli_flags_override_config(tmp_path):
    cfg = write_cfg(tmp_path, policy="sada")
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(cfg), "--policy", "none", "--force-mode", "fresh",
                     "--seeds", "0", "--out", str(out)]) == 0
    row = read_reports(out)[0]
    assert row["policy"]["policy"] == "none" and row["policy"]["force_mode"] == "fresh"
    assert row["terminal_rel_l2"] == 0.0


def test_cli_invalid_config_exit_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, N=1, gmm_variance=-2.0)
    assert cli.main(["run", "--config", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "N" in err and "gmm_variance" in err


def test_cli_bad_arguments_exit_2(tmp_path):
    assert cli.main(["run", "--policy", "turbo"]) == 2
    assert cli.main(["frobnicate"]) == 2
    assert cli.main(["report", str(tmp_path / "nothing")]) == 2


def test_cli_runtime_abort_exit_1(tmp_path, monkeypatch):
    def explode(*a, **k):
        raise FloatingPointError("diverged")

    monkeypatch.setattr(cli, "run_experiment", explode)
    assert cli.main(["run", "--config", str(write_cfg(tmp_path)), "--out", str(tmp_path)]) == 1


def test_cli_incomplete_run_exit_1(tmp_path, monkeypatch):
    real = experiments.SadaController.run

    def failing(self):
        real(self)
        raise FloatingPointError("late failure")

    monkeypatch.setattr(experiments.SadaController, "run", failing)
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(write_cfg(tmp_path)), "--seeds", "0", "--out", str(out)]) == 1
    assert read_reports(out)[0]["complete"] is False


def test_cli_convergence(tmp_path, capsys):
    assert cli.main(["convergence", "--scheme", "adams-moulton", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "convergence.csv").exists()
    assert "fitted slope" in capsys.readouterr().out


def test_cli_compare(tmp_path):
    cfg = write_cfg(tmp_path, N=20)
    assert cli.main(["compare", "--config", str(cfg), "--seeds", "0-2", "--out", str(tmp_path / "c")]) == 0
    summary = json.loads((tmp_path / "c" / "compare.json").read_text())
    assert set(summary) == {"sada", "eq5", "tau", "matched"}
    assert len(read_reports(tmp_path / "c")) == 6
