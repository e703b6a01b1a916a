"""Batch command-line front end.

Every subcommand is a thin shell over library operations; all outputs are
static files (reports and plot-ready data). Exit codes: 0 success,
2 validation failure, 3 numerical failure, 4 inconsistent data.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .core import (
    InconsistentDataError,
    NumericalError,
    SumcalError,
    ValidationError,
    load_config,
    load_experiment_manifest,
    load_parameter_space,
    write_parameter_space,
)
from .demo import run_demo
from .gsa import (
    rank_and_truncate,
    read_ranking_csv,
    sensitivity_table,
    write_ranking_csv,
    write_sensitivity_csv,
)
from .mcmc import read_chain_csv
from .pce import read_family_archive
from .pipeline import summarize_pushforward, write_pushforward_csv
from .runner import (
    fit_families_from_samples,
    load_family_archives,
    predictor_for,
    run_beta_stage,
    run_calibration,
    working_data_set,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_INCONSISTENT = 4


def cmd_fit_surrogate(args) -> int:
    space = load_parameter_space(args.bounds)
    data_sets = load_experiment_manifest(args.manifest)
    families = fit_families_from_samples(
        space,
        args.samples,
        args.out_dir,
        order=args.order,
        prune_threshold=args.prune_threshold,
        prune_passes=args.prune_passes,
        test_fraction=args.test_fraction,
        data_space=args.data_space,
    )
    missing = [d.id for d in data_sets if d.id not in families]
    if missing:
        raise ValidationError(
            f"samples file has no output columns for experiment(s) {missing}"
        )
    print(f"wrote {len(families)} surrogate archive(s) to {args.out_dir}")
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    archives = [Path(p) for p in args.archive]
    if not archives:
        raise ValidationError("at least one --archive required")
    active_by_id: dict[int, list[str]] = {}
    for spec in args.active or []:
        set_part, _, names = spec.partition("=")
        try:
            active_by_id[int(set_part)] = [n.strip() for n in names.split(",") if n.strip()]
        except ValueError:
            raise ValidationError(f"malformed --active '{spec}' (use ID=name1,name2)") from None

    tables = []
    for path in archives:
        family, meta = read_family_archive(path)
        if "experiment" not in meta:
            raise ValidationError(f"{path}: archive carries no experiment id")
        set_id = int(meta["experiment"])
        for coord, surr in zip(family.coords, family.surrogates):
            if surr.variance() == 0.0:
                print(
                    f"warning: experiment {set_id} station {coord:g} has a constant "
                    f"surrogate (zero variance)",
                    file=sys.stderr,
                )
        tables.append(
            sensitivity_table(
                set_id,
                family.surrogates,
                station_labels=[f"{c:g}" for c in family.coords],
                active=active_by_id.get(set_id),
            )
        )
    result = rank_and_truncate(tables, args.threshold, clamp=not args.no_clamp)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_sensitivity_csv(tables, out_dir / "sensitivity.csv")
    write_ranking_csv(result, out_dir / "ranking.csv")
    if not result.reached:
        print(
            f"warning: threshold {args.threshold:g} unreachable; retaining all parameters",
            file=sys.stderr,
        )
    print(
        f"retained {len(result.retained)}/{len(result.parameters)} parameters "
        f"at threshold {args.threshold:g}"
    )
    return EXIT_OK


def cmd_reduce(args) -> int:
    space = load_parameter_space(args.bounds)
    ranking = read_ranking_csv(args.ranking)
    retained = {name for name, _, kept in ranking if kept}
    unknown = retained - set(space.names)
    if unknown:
        raise ValidationError(f"ranking names not in bounds file: {sorted(unknown)}")
    entries = tuple(e for e in space.entries if e.name in retained)
    if not entries:
        raise ValidationError("no retained parameters; nothing to write")
    reduced = type(space)(entries)
    write_parameter_space(reduced, args.out)
    print(f"kept {reduced.size}/{space.size} parameters -> {args.out}")
    return EXIT_OK


def _load_run_inputs(args):
    space = load_parameter_space(args.bounds)
    config = load_config(args.config)
    data_sets = load_experiment_manifest(args.manifest)
    families = load_family_archives(args.archive_dir, data_sets, space, config)
    input_files = {
        "bounds": args.bounds,
        "manifest": args.manifest,
        "config": args.config,
    }
    return space, config, data_sets, families, input_files


def cmd_consistent_data(args) -> int:
    space, config, data_sets, families, _ = _load_run_inputs(args)
    reports, _, _ = run_beta_stage(
        space, config, data_sets, families, args.out_dir, n_workers=args.workers
    )
    betas = {
        f"d{set_id}": {
            "beta": report.selected.beta,
            "rho": report.selected.rho,
            "consistent": report.consistent,
        }
        for set_id, report in reports.items()
    }
    out_dir = Path(args.out_dir)
    (out_dir / "selected_betas.json").write_text(
        json.dumps(betas, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    for set_id, report in sorted(reports.items()):
        status = "consistent" if report.consistent else "INCONSISTENT"
        print(f"d{set_id}: beta={report.selected.beta:g} rho={report.selected.rho:.6g} {status}")
    if not all(r.consistent for r in reports.values()) and not args.allow_inconsistent:
        raise InconsistentDataError(
            "some experiments missed the consistency tolerance "
            "(rerun with --allow-inconsistent to proceed anyway)"
        )
    return EXIT_OK


def cmd_calibrate(args) -> int:
    space, config, data_sets, families, input_files = _load_run_inputs(args)
    outcome = run_calibration(
        space,
        config,
        data_sets,
        families,
        args.out_dir,
        n_workers=args.workers,
        trace_stride=args.trace_stride,
        input_files=input_files,
    )
    print((outcome.out_dir / "report.txt").read_text(), end="")
    if not outcome.all_consistent and not args.allow_inconsistent:
        raise InconsistentDataError(
            "some experiments missed the consistency tolerance; artifacts were "
            "kept (rerun with --allow-inconsistent to exit 0)"
        )
    return EXIT_OK


def cmd_pushforward(args) -> int:
    space, config, data_sets, families, _ = _load_run_inputs(args)
    states, logposts, names = read_chain_csv(args.chain)
    if names != list(space.names):
        raise ValidationError("chain archive parameter columns do not match the bounds file")
    if states.shape[0] < 2:
        raise ValidationError("chain archive too short")
    walk, walk_lp = states[1:], logposts[1:]  # row 0 is the start state
    if config.burn_in >= walk.shape[0]:
        raise ValidationError("burn-in exceeds the stored chain length")
    retained = walk[config.burn_in + config.subsample - 1 :: config.subsample]
    map_point = walk[int(np.argmax(walk_lp))]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for data in sorted(data_sets, key=lambda d: d.id):
        working = working_data_set(data, config)
        predictor = predictor_for(families[data.id], working)
        summary = summarize_pushforward(data.id, retained, map_point, predictor)
        write_pushforward_csv(summary, working, out_dir / f"pushforward_d{data.id}.csv")
    print(f"wrote {len(data_sets)} pushforward table(s) to {out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    report = run_dir / "report.txt"
    if not report.exists():
        raise ValidationError(f"{run_dir}: no report.txt (is this a run directory?)")
    print(report.read_text(), end="")
    return EXIT_OK


def cmd_demo(args) -> int:
    outcome = run_demo(args.out_dir, master_seed=args.seed, n_workers=args.workers)
    print((outcome.out_dir / "report.txt").read_text(), end="")
    if not outcome.all_consistent:
        raise InconsistentDataError("demo run missed the consistency tolerance")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sumcal",
        description="Calibrate forward-model parameters against reported summary statistics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-surrogate", help="fit per-station surrogates from a samples file")
    p.add_argument("--bounds", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--prune-threshold", type=float, default=1e-4)
    p.add_argument("--prune-passes", type=int, default=10)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--data-space", choices=["linear", "log10"], default="linear")
    p.set_defaults(func=cmd_fit_surrogate)

    p = sub.add_parser("sensitivity", help="total Sobol indices, ranking, truncation")
    p.add_argument("--archive", action="append", required=True,
                   help="surrogate archive (repeatable)")
    p.add_argument("--threshold", type=float, default=0.75)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--active", action="append",
                   help="restrict an experiment to listed parameters: ID=name1,name2")
    p.add_argument("--no-clamp", action="store_true",
                   help="use raw (unclamped) index sums for the variance target")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("reduce", help="write a bounds file restricted to retained parameters")
    p.add_argument("--bounds", required=True)
    p.add_argument("--ranking", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reduce)

    def run_io(p, chain=False):
        p.add_argument("--bounds", required=True)
        p.add_argument("--manifest", required=True)
        p.add_argument("--archive-dir", required=True)
        p.add_argument("--config", required=True)
        p.add_argument("--out-dir", required=True)
        if chain:
            p.add_argument("--chain", required=True)

    p = sub.add_parser("consistent-data", help="per-experiment synthetic-data scale search")
    run_io(p)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--allow-inconsistent", action="store_true")
    p.set_defaults(func=cmd_consistent_data)

    p = sub.add_parser("calibrate", help="full pipeline: beta search + joint calibration")
    run_io(p)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--allow-inconsistent", action="store_true")
    p.add_argument("--trace-stride", type=int, default=0,
                   help="trace-file thinning; 0 picks about 10k points")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("pushforward", help="recompute pushforward tables from a chain archive")
    run_io(p, chain=True)
    p.set_defaults(func=cmd_pushforward)

    p = sub.add_parser("report", help="print the summary of a finished run")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("demo", help="generate and run the bundled ground-truth problem")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InconsistentDataError as exc:
        print(f"error [inconsistent-data]: {exc}", file=sys.stderr)
        return EXIT_INCONSISTENT
    except ValidationError as exc:
        print(f"error [validation]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"error [numerical]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileNotFoundError, PermissionError) as exc:
        print(f"error [validation]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SumcalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
