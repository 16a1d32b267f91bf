"""Command-line interface.

Subcommands: ``simulate`` (one pipeline run), ``montecarlo`` (seed ensemble),
``sweep`` (pipeline per meta-budget candidate, CSV tables), ``energy``
(closed-form tables from a profile and a stored response fixture, no
simulation), ``fixtures`` (dump the built-in profile/response fixtures).

Exit codes: 0 success, 1 validation error, 2 non-convergence under --strict.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import runner
from .energy import BUILTIN_RESPONSES, profile_to_dict, table1, table2_response
from .errors import ConfigError, SimulationError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NONCONVERGED = 2


def _parse_t0_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.split(",") if part.strip() != "")
    except ValueError as exc:
        raise ConfigError(f"--t0: expected comma-separated integers, got {text!r}") from exc
    if not values:
        raise ConfigError("--t0: empty list")
    return values


def _load_config(args) -> runner.ExperimentConfig:
    cfg = runner.load_config(args.config)
    if getattr(args, "profile", None):
        cfg = dataclasses.replace(cfg, profile=runner.resolve_profile(args.profile))
        runner.validate_config(cfg)
    if getattr(args, "workers", None):
        cfg = dataclasses.replace(cfg, workers=args.workers)
    return cfg


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    t0 = None
    if args.t0 is not None:
        values = _parse_t0_list(args.t0)
        if len(values) != 1:
            raise ConfigError("simulate takes a single --t0 value")
        t0 = values[0]
    seed = args.seed if args.seed is not None else cfg.master_seed
    record = runner.run_pipeline(cfg, seed, t0)
    if args.out:
        runner.save_run_outputs(cfg, record, Path(args.out))
    summary = {
        "t0": record.t0,
        "rounds": {str(t): r for t, r in sorted(record.rounds.items())},
        "converged": all(record.converged.values()),
        "energy_total_j": record.energy_total.total_j,
    }
    print(json.dumps(summary, indent=2))
    if args.strict and not all(record.converged.values()):
        stuck = sorted(t for t, ok in record.converged.items() if not ok)
        print(f"non-converged tasks: {stuck}", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _cmd_montecarlo(args) -> int:
    cfg = _load_config(args)
    t0 = None
    if args.t0 is not None:
        values = _parse_t0_list(args.t0)
        if len(values) != 1:
            raise ConfigError("montecarlo takes a single --t0 value")
        t0 = values[0]
    result = runner.monte_carlo(cfg, t0=t0)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(
            json.dumps(runner.config_to_dict(cfg), indent=2, sort_keys=True),
            encoding="utf-8")
        for record in result.records:
            runner.save_record(record, out)
        (out / "aggregate.json").write_text(
            json.dumps(result.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    print(json.dumps(result.to_dict(), indent=2))
    if args.strict and any(not all(r.converged.values()) for r in result.records):
        return EXIT_NONCONVERGED
    return EXIT_OK


def _write_tables(out_dir: Path, output: runner.SweepOutput) -> None:
    tables = out_dir / "tables"
    runner.write_csv(tables / "tradeoff.csv", runner.TRADEOFF_COLUMNS,
                     output.tradeoff_rows)
    runner.write_csv(tables / "rounds.csv", runner.ROUNDS_COLUMNS, output.rounds_rows)
    runner.write_csv(tables / "rounds_matrix.csv",
                     list(output.rounds_matrix_rows[0].keys()),
                     output.rounds_matrix_rows)
    if output.bars_rows:
        runner.write_csv(tables / "bars.csv", runner.BARS_COLUMNS, output.bars_rows)


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    candidates = _parse_t0_list(args.t0) if args.t0 is not None else None
    output = runner.sweep(cfg, candidates)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(
            json.dumps(runner.config_to_dict(cfg), indent=2, sort_keys=True),
            encoding="utf-8")
        _write_tables(out, output)
        for result in output.per_t0.values():
            for record in result.records:
                runner.save_record(record, out)
    if args.format == "json":
        print(json.dumps(output.tradeoff_rows, indent=2))
    else:
        for row in output.tradeoff_rows:
            print(",".join(str(row[c]) for c in runner.TRADEOFF_COLUMNS))
    return EXIT_OK


def _cmd_energy(args) -> int:
    profile = runner.resolve_profile(args.profile or "table1")
    response = runner.resolve_response(args.response)
    if args.t0 is not None:
        wanted = set(_parse_t0_list(args.t0))
        missing = wanted - set(response)
        if missing:
            raise ConfigError(f"--t0 values {sorted(missing)} not in the response fixture")
        response = {t0: rounds for t0, rounds in response.items() if t0 in wanted}
    n_tasks = len(next(iter(response.values())))
    from .consensus import builtin_topology

    topology = builtin_topology("pairs", n_tasks=n_tasks)
    clusters = {tid: topology.cluster_neighbors(tid) for tid in sorted(topology.clusters)}
    settings = runner.DEFAULT_SETTINGS
    rows, sweeps = runner.tradeoff_rows(response, profile, clusters,
                                        args.training_tasks, settings)
    if args.out:
        runner.write_csv(Path(args.out) / "tables" / "tradeoff.csv",
                         runner.TRADEOFF_COLUMNS, rows)
    if args.format == "json":
        print(json.dumps({"rows": rows,
                          "argmin": {name: s.argmin_t0 for name, s in sweeps.items()}},
                         indent=2))
    else:
        print(",".join(runner.TRADEOFF_COLUMNS))
        for row in rows:
            print(",".join(str(row[c]) for c in runner.TRADEOFF_COLUMNS))
    return EXIT_OK


def _cmd_fixtures(args) -> int:
    fixtures = {
        "table1": profile_to_dict(table1()),
        "table2": {str(t0): list(rounds) for t0, rounds in table2_response().items()},
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, doc in fixtures.items():
            (out / f"{name}.json").write_text(json.dumps(doc, indent=2, sort_keys=True),
                                              encoding="utf-8")
        print(f"wrote {', '.join(sorted(fixtures))} to {out}")
    else:
        print(json.dumps(fixtures, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metafed",
        description="Meta-initialized multi-task learning simulator with energy accounting")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=False, workers=False):
        p.add_argument("--config", type=Path, default=None, help="experiment config JSON")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--t0", type=str, default=None,
                       help="meta-training rounds (comma-separated list for sweep)")
        p.add_argument("--profile", type=str, default=None,
                       help="energy profile: builtin name or JSON path")
        p.add_argument("--format", choices=("csv", "json"), default="json")
        p.add_argument("--strict", action="store_true",
                       help="exit 2 when any task fails to converge")
        if seed:
            p.add_argument("--seed", type=int, default=None)
        if workers:
            p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("simulate", help="run one pipeline")
    common(p, seed=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("montecarlo", help="run a seed ensemble and aggregate")
    common(p, workers=True)
    p.set_defaults(func=_cmd_montecarlo)

    p = sub.add_parser("sweep", help="simulate per t0 candidate and emit CSV tables")
    common(p, workers=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("energy", help="closed-form tables from profile + response fixture")
    p.add_argument("--profile", type=str, default="table1")
    p.add_argument("--response", type=str, default="table2",
                   help=f"builtin ({', '.join(sorted(BUILTIN_RESPONSES))}) or JSON path")
    p.add_argument("--t0", type=str, default=None)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--training-tasks", type=lambda s: tuple(int(x) for x in s.split(",")),
                   default=(1, 2, 6))
    p.set_defaults(func=_cmd_energy)

    p = sub.add_parser("fixtures", help="dump the built-in table1/table2 fixtures")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=_cmd_fixtures)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
