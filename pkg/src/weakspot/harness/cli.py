"""Search a benchmark's template space for certifiably hard templates.

Verbs::

    weakspot run      --out DIR [--config FILE] [overrides]
    weakspot uniform  --out DIR [--config FILE] [overrides]
    weakspot reeval   --run DIR [--top-k K] [--min-samples M]
    weakspot report   --run DIR
    weakspot verify   --suite {coverage,g1,g2} [--seeds N]
    weakspot resume   --run DIR --snapshot FILE [--config FILE]

A run directory holds ``trace.jsonl`` (header + events), ``final.pkl`` (end
state, used by ``reeval``) and, after ``report``, the ``*.tsv`` tables.

Exit codes: 0 success, 2 configuration error, 3 backend error,
4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from weakspot.config import CertPolicy, ConfigError, RepulsionPolicy, RunConfig
from weakspot.harness import report as rep
from weakspot.harness import run as runner
from weakspot.harness.build import build_space, load_config
from weakspot.harness.trace import Trace, TraceError, read_trace
from weakspot.harness.verify import SUITES
from weakspot.oracle import BackendError, UtilityError
from weakspot.space import SpaceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_VERIFY = 4

TRACE = "trace.jsonl"
FINAL = "final.pkl"
REEVAL = "reeval.json"

log = logging.getLogger("weakspot")


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML or JSON config file")
    p.add_argument("--environment", help="synthetic environment preset (sets space and backend)")
    p.add_argument("--budget", type=int, dest="budget_total")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--n0", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--cert", choices=("none", "fixed", "adaptive"))
    p.add_argument("--tau", type=float)
    p.add_argument("--repulsion", action="store_true", default=None)
    p.add_argument("--lam", type=float, help="repulsion weight")
    p.add_argument("--no-surrogate", action="store_true", default=None)
    p.add_argument("--schedule", choices=("expected", "pessimistic"))
    p.add_argument("--out", type=Path, required=True, help="run directory")


def config_from_args(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    changes = {}
    for name in ("budget_total", "batch_size", "n0", "delta", "c", "seed", "parallelism", "schedule"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    if args.environment:
        changes["space"] = {"preset": args.environment}
        changes["backend"] = {"kind": "synthetic", "environment": args.environment}
    if args.no_surrogate:
        changes["surrogate"] = False
    if args.cert or args.tau is not None:
        base = config.cert
        changes["cert"] = CertPolicy(args.cert or base.kind, args.tau if args.tau is not None else base.tau,
                                     base.floor, base.grid)
    if args.repulsion or args.lam is not None:
        base = config.repulsion
        changes["repulsion"] = RepulsionPolicy(True if args.repulsion else base.enabled,
                                               args.lam if args.lam is not None else base.lam, base.epsilon_ref)
    try:
        return config.replace(**changes)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _summary(state) -> dict:
    return {
        "budget_used": state.budget_used,
        "batches": state.step,
        "pool_size": state.pool.n,
        "certified": [list(state.pool.ids[i]) for i in state.certified_order],
        "threshold": state.threshold,
        "epsilon": state.epsilon,
        "gamma": state.gamma,
    }


def _finish_run(out: Path, state, backend, trace) -> None:
    runner.save_snapshot(out / FINAL, state, backend, trace)
    (out / "summary.json").write_text(json.dumps(_summary(state), indent=2) + "\n")
    print(json.dumps(_summary(state)))


def cmd_run(args, uniform: bool = False) -> int:
    config = config_from_args(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    space = build_space(config)
    backend = runner.build_backend(config, space)
    try:
        if uniform:
            state, trace = runner.run_uniform(config, out / TRACE, backend=backend, space=space)
        else:
            snap = (args.snapshot_at, out / f"snapshot_{args.snapshot_at}.pkl") if args.snapshot_at else None
            state, trace = runner.run(config, out / TRACE, backend=backend, space=space, snapshot=snap)
        _finish_run(out, state, backend, trace)
    finally:
        backend.close()
    return EXIT_OK


def cmd_resume(args) -> int:
    run_dir = args.run
    config = load_config(args.config) if args.config else None
    payload = runner.load_snapshot(args.snapshot)
    snapped = payload["state"]
    backend = runner.build_backend(snapped.config, snapped.space)
    try:
        state, trace = runner.resume(args.snapshot, run_dir / TRACE, config=config, backend=backend)
        _finish_run(run_dir, state, backend, trace)
    finally:
        backend.close()
    return EXIT_OK


def cmd_reeval(args) -> int:
    run_dir = args.run
    payload = runner.load_snapshot(run_dir / FINAL)
    state = payload["state"]
    recorded = read_trace(run_dir / TRACE)
    trace = Trace({k: v for k, v in recorded.header.items() if k != "format_version"}, run_dir / TRACE, append=True)
    trace.events = recorded.events
    state.sink = trace.sink
    trace.bind(lambda: (state.step, state.budget_used))
    by = "mean" if recorded.header.get("mode") == "uniform" else "lcb"
    backend = runner.reevaluation_backend(state.config, state.space)
    try:
        rows = runner.reevaluate(state, backend, args.top_k, args.min_samples, by=by)
    finally:
        trace.close()
        backend.close()
    (run_dir / REEVAL).write_text(json.dumps([r.to_dict() for r in rows], indent=1) + "\n")
    print(json.dumps({"rows": len(rows), "fresh_draws": sum(r.fresh_m for r in rows)}))
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = args.run
    trace = read_trace(run_dir / TRACE)
    rows = runner.rows_from_trace(trace)
    mode = "mean" if trace.header.get("mode") == "uniform" else "lcb"
    report = rep.build_report(rows, mode)
    paths = rep.write_report(report, run_dir, prefix=args.prefix, whiskers=args.whiskers)
    for path in paths:
        print(path)
    return EXIT_OK


def cmd_verify(args) -> int:
    suite = SUITES[args.suite]
    kwargs = {}
    if args.seeds is not None:
        kwargs["runs" if args.suite == "coverage" else "seeds"] = args.seeds
    result = suite(**kwargs)
    print(json.dumps(result.to_dict()))
    return EXIT_OK if result.passed else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weakspot", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="adaptive confidence-bounded search")
    _add_overrides(p)
    p.add_argument("--snapshot-at", type=int, help="write a resumable snapshot after this many batches")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("uniform", help="uniform-sampling baseline with the same budget")
    _add_overrides(p)
    p.set_defaults(func=lambda a: cmd_run(a, uniform=True))

    p = sub.add_parser("reeval", help="top up the best-ranked arms with fresh samples")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--top-k", type=int)
    p.add_argument("--min-samples", type=int)
    p.set_defaults(func=cmd_reeval)

    p = sub.add_parser("report", help="write ranking/curve/whisker tables from a re-evaluated run")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--prefix", default="report")
    p.add_argument("--whiskers", type=int, default=100)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", help="Monte Carlo guarantee checks")
    p.add_argument("--suite", choices=sorted(SUITES), required=True)
    p.add_argument("--seeds", type=int, help="number of seeds (runs for the coverage suite)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("resume", help="continue a run from a snapshot")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--snapshot", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.set_defaults(func=cmd_resume)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SpaceError, UtilityError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except BackendError as exc:
        log.error("backend error: %s", exc)
        return EXIT_BACKEND
    except (runner.SnapshotError, TraceError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
