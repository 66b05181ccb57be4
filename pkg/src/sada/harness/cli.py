"""Command-line entry point.

Exit codes: 0 on success, 2 when the configuration (or the command line) is
invalid, 1 when a run aborts at runtime.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path

from ..errors import ConfigValidationError
from .config import RunConfig, from_mapping, load_config
from .experiments import compare_policies, convergence_study, run_experiment, summarize
from .outputs import ReportWriter, jsonable, read_reports

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2
log = logging.getLogger("sada")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML or JSON key/value run configuration")
    p.add_argument("--seeds", help="seed list such as '0-9' or '1,4,7'")
    p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    p.add_argument("--force-mode", choices=["none", "fresh", "stable", "unstable"],
                   help="override every stability verdict")
    p.add_argument("--policy", choices=["sada", "eq5", "none"], help="acceleration policy")
    p.add_argument("--workers", type=int, help="concurrent seed runs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sada", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="paired baseline/accelerated runs per the config")
    _common(run)
    conv = sub.add_parser("convergence", help="observed order of an estimator on the analytic battery")
    _common(conv)
    conv.add_argument("--scheme", choices=["adams-moulton", "lagrange-k", "backward-extrap"])
    cmp_ = sub.add_parser("compare", help="SADA against the comparison policy at matched NFE")
    _common(cmp_)
    cmp_.add_argument("--no-match", action="store_true", help="use the configured tau as is")
    rep = sub.add_parser("report", help="summarise a reports.jsonl file or output directory")
    rep.add_argument("path", type=Path, nargs="?", help="reports.jsonl or its directory")
    rep.add_argument("--out", type=Path, help="directory holding reports.jsonl")
    return parser


def resolve_config(args) -> RunConfig:
    """Config file plus command-line overrides, validated as one document."""
    if args.config is not None:
        data = asdict(load_config(args.config))
    else:
        data = asdict(RunConfig())
    if args.seeds is not None:
        data["seeds"] = args.seeds
    if args.out is not None:
        data["output_dir"] = str(args.out)
    if args.force_mode is not None:
        data["force_mode"] = None if args.force_mode == "none" else args.force_mode
    if args.policy is not None:
        data["policy"] = args.policy
    if getattr(args, "workers", None) is not None:
        data["workers"] = args.workers
    if getattr(args, "scheme", None) is not None:
        data["scheme"] = args.scheme
    return from_mapping(data)


def _print_summary(title: str, summary: dict) -> None:
    parts = [f"{k}={_fmt(v)}" for k, v in summary.items()]
    print(f"{title}: " + " ".join(parts))


def _fmt(v):
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.6g}"
    return str(v)


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    reports = run_experiment(cfg)
    sampling = [r for r in reports if r.terminal_rel_l2 is not None]
    if cfg.experiment in ("baseline", "sada", "eq5"):
        _print_summary(cfg.experiment, summarize(sampling))
    else:
        print(f"{cfg.experiment}: {len(reports)} reports written to {cfg.output_dir}")
    failed = [r for r in reports if not r.complete]
    for r in failed:
        log.error("seed %s aborted: %s", r.seed, r.error)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_convergence(args) -> int:
    cfg = resolve_config(args)
    rows, slopes = convergence_study(cfg.scheme, cfg.resolutions, nodes=cfg.lagrange_nodes)
    writer = ReportWriter(cfg.output_dir)
    writer.write_table("convergence.csv", rows,
                       ["scheme", "function", "nodes", "h", "error", "observed_order"])
    print(f"{'function':>8} {'h':>10} {'error':>12} {'order':>7}")
    for row in rows:
        order = "" if row["observed_order"] is None else f"{row['observed_order']:.3f}"
        print(f"{row['function']:>8} {row['h']:>10.3g} {row['error']:>12.4e} {order:>7}")
    for fn, s in slopes.items():
        print(f"fitted slope {fn}: {'exact' if math.isnan(s) else f'{s:.3f}'}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = resolve_config(args)
    result = compare_policies(cfg, match_nfe=not args.no_match)
    writer = ReportWriter(cfg.output_dir)
    writer.write_reports(result["sada_reports"] + result["eq5_reports"])
    _print_summary("sada", result["sada"])
    _print_summary(f"eq5 (tau={result['tau']:.6g})", result["eq5"])
    print(f"matched NFE within 5%: {result['matched']}")
    summary = {k: result[k] for k in ("sada", "eq5", "tau", "matched")}
    (Path(cfg.output_dir) / "compare.json").write_text(
        json.dumps(jsonable(summary), sort_keys=True, indent=1))
    incomplete = [r for r in result["sada_reports"] + result["eq5_reports"] if not r.complete]
    return EXIT_RUNTIME if incomplete else EXIT_OK


def cmd_report(args) -> int:
    path = args.path or args.out
    if path is None:
        print("report: give a path or --out", file=sys.stderr)
        return EXIT_INVALID
    if not path.exists():
        print(f"report: {path} does not exist", file=sys.stderr)
        return EXIT_INVALID
    rows = read_reports(path)
    groups: dict[tuple, list] = {}
    for row in rows:
        key = (row.get("experiment"), row.get("solver_kind"), row.get("steps"),
               (row.get("policy") or {}).get("policy"))
        groups.setdefault(key, []).append(row)
    print(f"{'experiment':>12} {'solver':>12} {'N':>4} {'policy':>6} {'runs':>5} "
          f"{'rel_l2':>10} {'speedup':>8} {'incomplete':>10}")
    for (exp, solver, n, policy), group in sorted(groups.items(), key=lambda kv: str(kv[0])):
        done = [g for g in group if g.get("complete", True)]
        rel = [g["terminal_rel_l2"] for g in done if g.get("terminal_rel_l2") is not None]
        base = sum(g.get("steps") or 0 for g in done)
        acc = sum(g.get("nfe_equivalent") or 0 for g in done)
        speed = base / acc if acc else float("nan")
        mean_rel = sum(rel) / len(rel) if rel else float("nan")
        print(f"{exp!s:>12} {solver!s:>12} {n!s:>4} {policy!s:>6} {len(group):>5} "
              f"{mean_rel:>10.4g} {speed:>8.3f} {len(group) - len(done):>10}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "convergence": cmd_convergence, "compare": cmd_compare,
            "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigValidationError as exc:
        print("invalid configuration:", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.exception("run aborted")
        print(f"aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
