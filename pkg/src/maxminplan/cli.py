"""Command line entry point.

    maxminplan run --config exp.ini [--algo proposed,optimal] [--seed 3] [--out DIR] [--scale full]
    maxminplan compare --runs DIR [DIR ...] --out DIR
    maxminplan verify

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import config as config_mod
from . import harness, report
from .checks import run_checks

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("maxminplan")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="maxminplan", description="Distributed online planning for max-min formation games.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--algo", help=f"comma-separated subset of {', '.join(harness.ALGORITHMS)}")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", type=Path)
    r.add_argument("--scale", choices=("desk", "full"),
                   help="full: T=150, L=100, K=1000 (overrides the config)")

    c = sub.add_parser("compare", help="overlay and summarize finished runs")
    c.add_argument("--runs", nargs="+", required=True, type=Path)
    c.add_argument("--out", required=True, type=Path)

    sub.add_parser("verify", help="run the built-in oracle checks")
    return p


def _with_scale(cfg: harness.ExperimentConfig, scale: str | None) -> harness.ExperimentConfig:
    if scale != "full":
        return cfg
    ps = config_mod.FULL_SCALE
    return replace(cfg, horizon=ps["horizon"], planner=replace(cfg.planner, n_queries=ps["n_queries"]),
                   optimizer=replace(cfg.optimizer, n_iters=ps["n_iters"]))


def _cmd_run(args) -> int:
    try:
        cfg = config_mod.load(args.config)
    except config_mod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    algos = args.algo.split(",") if args.algo else [cfg.algorithm]
    bad = [a for a in algos if a not in harness.ALGORITHMS]
    if bad:
        print(f"config error: unknown algorithm(s) {', '.join(bad)}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    cfg = _with_scale(cfg, args.scale)
    out = args.out or cfg.out_dir or Path("runs") / f"{cfg.topology_name}-s{cfg.seed}"

    records = []
    for algo in algos:
        log.info("running %s on %s (seed %d, T=%d)", algo, cfg.topology_name, cfg.seed, cfg.horizon)
        try:
            records.append(harness.run(replace(cfg, algorithm=algo)))
        except harness.RunError as exc:
            print(f"run failed: {exc}", file=sys.stderr)
            if exc.record is not None and exc.record.horizon:
                partial = Path(out) / f"{algo}-{cfg.topology_name}-s{cfg.seed}-partial"
                try:
                    report.write_run(exc.record, partial)
                    print(f"partial record written to {partial}", file=sys.stderr)
                except OSError:
                    pass
            return EXIT_RUNTIME
    try:
        written = report.report(records, out)
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for rec in records:
        row = report.summary_row(rec)
        print(f"{rec.algorithm:17s} worst cumulative {row['worst_cumulative']:10.3f}  "
              f"final worst {row['final_worst']:8.4f}  {row['wall_clock_s']:7.1f}s")
    print(f"wrote {len(written)} files under {out}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    records = []
    for d in args.runs:
        dirs = [d] if (d / "meta.json").exists() else sorted(p.parent for p in d.glob("*/meta.json"))
        if not dirs:
            print(f"config error: {d} holds no run output", file=sys.stderr)
            return EXIT_CONFIG
        try:
            records.extend(report.load_run(x) for x in dirs)
        except (OSError, ValueError, KeyError) as exc:
            print(f"config error: cannot load {d}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        report.report(records, args.out)
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for rec in sorted(records, key=lambda r: (r.topology_name, r.seed, -r.worst_cumulative)):
        print(f"{rec.topology_name:10s} seed {rec.seed:<3d} {rec.algorithm:17s} {rec.worst_cumulative:10.3f}")
    print(f"summary and overlay written to {args.out}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    results = run_checks()
    for c in results:
        print(f"{'PASS' if c.ok else 'FAIL'}  {c.name:16s} {c.detail}  ({c.seconds:.2f}s)")
    return EXIT_OK if all(c.ok for c in results) else EXIT_RUNTIME


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    return {"run": _cmd_run, "compare": _cmd_compare, "verify": _cmd_verify}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
