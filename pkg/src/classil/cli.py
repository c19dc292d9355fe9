"""Command-line entry point.

Subcommands: ``generate`` synthetic data, ``run`` an experiment, ``evaluate``
extra methods against a stored run, ``gil`` over an accuracy table, ``analyze``
weight/feature diagnostics, ``report`` tables and figures. Exit codes: 0 ok,
2 configuration error, 3 artifact integrity error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, datahub, experiment, weightbank
from .errors import (
    EXIT_CONFIG,
    EXIT_INTEGRITY,
    EXIT_NUMERIC,
    EXIT_OK,
    ClassILError,
    ConfigError,
    DataFormatError,
    DegenerateInputError,
    IntegrityError,
)


def _cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, per_class in (("train", args.per_class), ("test", args.test_per_class)):
        ds = datahub.generate_synthetic(
            args.classes, per_class, args.dim, args.spread, args.seed, split=split
        )
        ext = "csv" if args.format == "csv" else "bin"
        path = out / f"{split}.{ext}"
        datahub.save_dataset(ds, path, fmt=args.format)
        print(f"wrote {path} ({ds.num_samples} rows, {ds.dim} dims)")
    return EXIT_OK


def _apply_overrides(cfg, args):
    if args.out is not None:
        cfg.output = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.grid is not None:
        cfg.grid = [g.strip() for g in args.grid.split(",") if g.strip()]
    return experiment.ExperimentConfig(
        cfg.dataset, cfg.states, cfg.seed, cfg.train, cfg.grid, cfg.output
    )


def _print_summary(reports: dict) -> None:
    for name in sorted(reports):
        avg = reports[name].average_incremental_top1
        shown = "n/a (single state)" if avg is None else f"{avg:.2f}"
        print(f"  {name:14s} avg incremental top-1: {shown}")


def _cmd_run(args) -> int:
    cfg = experiment.load_config(args.config) if args.config else experiment.ExperimentConfig()
    cfg = _apply_overrides(cfg, args)
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        base = Path(cfg.output)
        rows = {}
        for seed in seeds:
            sub = experiment.ExperimentConfig(
                cfg.dataset, cfg.states, seed, cfg.train, cfg.grid, str(base / f"seed_{seed}")
            )
            artifacts = experiment.run_experiment(sub)
            print(f"seed {seed}:")
            _print_summary(artifacts.reports)
            for name, report in artifacts.reports.items():
                rows.setdefault(name, []).append(report.average_incremental_top1)
        base.mkdir(parents=True, exist_ok=True)
        with open(base / "aggregate.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "mean_avg_inc_top1", "std_avg_inc_top1", "seeds"])
            for name in sorted(rows):
                vals = [v for v in rows[name] if v is not None]
                if not vals:
                    continue
                writer.writerow(
                    [
                        name,
                        f"{np.mean(vals):.4f}",
                        f"{np.std(vals):.4f}",
                        " ".join(str(s) for s in seeds),
                    ]
                )
        print(f"wrote {base / 'aggregate.csv'}")
        return EXIT_OK
    artifacts = experiment.run_experiment(cfg)
    print(f"run complete: {artifacts.run_dir}")
    _print_summary(artifacts.reports)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    grid = [g.strip() for g in args.grid.split(",") if g.strip()]
    if not grid:
        raise ConfigError("--grid must name at least one method")
    reports = experiment.evaluate_only(args.run, grid)
    _print_summary(reports)
    run_dir = Path(args.run)
    experiment.write_summary_csv(experiment.load_reports(run_dir), run_dir / "summary.csv")
    return EXIT_OK


def _cmd_gil(args) -> int:
    values = experiment.g_il_table(args.table, upper_bound=args.upper_bound)
    out_path = Path(args.out) if args.out else None
    if out_path:
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "g_il"])
            for method, value in values:
                writer.writerow([method, f"{value:.2f}"])
        print(f"wrote {out_path}")
    for method, value in values:
        print(f"  {method:16s} G_IL = {value:.2f}")
    return EXIT_OK


def _cmd_report(args) -> int:
    from . import plotting

    if args.runs:
        if not args.table:
            raise ConfigError("--runs needs --table <out.csv>")
        run_dirs = [r.strip() for r in args.runs.split(",") if r.strip()]
        experiment.write_accuracy_table(run_dirs, args.table, metric=args.metric)
        print(f"wrote {args.table}")
        return EXIT_OK
    if not args.run:
        raise ConfigError("report needs --run <dir> or --runs <dirs> --table <csv>")
    run_dir = Path(args.run)
    reports = experiment.load_reports(run_dir)
    out = run_dir / "figures"
    out.mkdir(exist_ok=True)
    experiment.write_summary_csv(reports, run_dir / "summary.csv")
    print(f"wrote {run_dir / 'summary.csv'}")
    plotting.render_accuracy_curves(reports, out / "accuracy_per_state.png")
    for name, report in reports.items():
        plotting.render_typology(report, out / f"typology_{name}.png")
    print(f"wrote figures to {out}")
    return EXIT_OK


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _cmd_analyze(args) -> int:
    from . import plotting

    run_dir = Path(args.run)
    cfg, stream, models, banks = experiment.load_run(run_dir)
    backbone = experiment.BACKBONE_FT
    if backbone not in models:
        backbone = sorted(models)[0]
    chain = models[backbone]
    bank = banks[backbone]
    out = run_dir / "analysis"
    out.mkdir(exist_ok=True)
    n = stream.classes_per_state

    raw = analysis.magnitude_profile(
        {t: m.head_weights for t, m in enumerate(chain) if t >= 1}, n, mode="raw"
    )
    initial = {
        t: weightbank.assemble_initial_matrix(bank, t)[0]
        for t in range(1, stream.num_states)
    }
    standardized = analysis.magnitude_profile(initial, n, mode="standardized")
    for profile, name in ((raw, "magnitude_raw"), (standardized, "magnitude_standardized")):
        _write_csv(
            out / f"{name}.csv",
            ["state", "new_mean", "past_mean"],
            [[r["state"], r["new_mean"], r["past_mean"]] for r in profile.to_csv_rows()],
        )
    plotting.render_magnitudes(raw, standardized, out / "magnitudes.png")

    train_set, test_set = experiment.load_experiment_data(cfg)
    probe = datahub.cumulative_test_view(stream, test_set, 0).features
    reference = stream.num_states - 1
    profiles = {
        "finetune": analysis.feature_similarity(chain, reference, probe)
    }

    def spec_for(state: int):
        return experiment._state_spec(cfg, state, distill=False)

    independent, _ = analysis.train_comparison_chain(
        train_set, stream, spec_for, cfg.train.hidden_sizes, cfg.seed, mode="independent"
    )
    profiles["independent"] = analysis.feature_similarity(independent, reference, probe)
    if args.memory:
        for fraction in (float(v) for v in args.memory.split(",") if v.strip()):
            buffered, _ = analysis.train_comparison_chain(
                train_set,
                stream,
                spec_for,
                cfg.train.hidden_sizes,
                cfg.seed,
                mode="finetune",
                memory_fraction=fraction,
            )
            profiles[f"memory_{fraction:g}"] = analysis.feature_similarity(
                buffered, reference, probe
            )
    header = ["state"] + sorted(profiles)
    rows = []
    for i in range(stream.num_states):
        rows.append([i] + [f"{profiles[k].rows[i][1]:.6f}" for k in sorted(profiles)])
    _write_csv(out / "feature_similarity.csv", header, rows)
    plotting.render_similarity(profiles, out / "feature_similarity.png")

    last_matrix = initial[stream.num_states - 1] if initial else chain[-1].head_weights
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 50]))
    take = min(args.distribution_classes, last_matrix.shape[0])
    picked = sorted(rng.choice(last_matrix.shape[0], size=take, replace=False).tolist())
    stats = analysis.distribution_stats(last_matrix[picked])
    _write_csv(
        out / "weight_distribution.csv",
        ["class_id", "mean", "std", "skewness", "excess_kurtosis"],
        [
            [cid, f"{s.mean:.6f}", f"{s.std:.6f}", f"{s.skewness:.6f}", f"{s.excess_kurtosis:.6f}"]
            for cid, s in zip(picked, stats)
        ],
    )
    hist = {
        str(cid): {"counts": list(s.histogram), "bin_edges": list(s.bin_edges)}
        for cid, s in zip(picked, stats)
    }
    (out / "weight_distribution_histograms.json").write_text(
        json.dumps(hist, indent=2, sort_keys=True) + "\n"
    )
    plotting.render_distributions(stats, picked, out / "weight_distribution.png")
    print(f"wrote analysis data and figures to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="classil",
        description="Memoryless class-incremental learning engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic train/test dataset")
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--test-per-class", type=int, default=50)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--spread", type=float, default=0.35)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--format", choices=["csv", "packed", "packed-binary"], default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("run", help="train and evaluate an experiment")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="seed override")
    p.add_argument("--grid", help="comma-separated method names override")
    p.add_argument("--seeds", help="comma-separated seeds; aggregate over repeats")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("evaluate", help="score extra methods against a stored run")
    p.add_argument("--run", required=True)
    p.add_argument("--grid", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("gil", help="G_IL column for an accuracy table CSV")
    p.add_argument("--table", required=True)
    p.add_argument("--out")
    p.add_argument("--upper-bound", type=float, default=100.0)
    p.set_defaults(func=_cmd_gil)

    p = sub.add_parser("analyze", help="weight magnitude / feature drift diagnostics")
    p.add_argument("--run", required=True)
    p.add_argument("--memory", help="comma-separated buffer fractions, e.g. 0.01,0.02")
    p.add_argument("--distribution-classes", type=int, default=6)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("report", help="summary table and figures for stored runs")
    p.add_argument("--run", help="single run: summary.csv + figures")
    p.add_argument("--runs", help="comma-separated run dirs for a cross-run table")
    p.add_argument("--table", help="output CSV for --runs (feeds the gil subcommand)")
    p.add_argument("--metric", choices=["top1", "top5"], default="top1")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (DegenerateInputError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ClassILError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
