"""Command-line entry point: ``stochbatch {run,sweep,aggregate,gradcheck,oracle}``.

Exit codes: 0 success, 1 configuration/input error, 2 numerical abort or
failed check.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .autodiff import NonFiniteError, finite_difference_check
from .config import ConfigError, ExperimentConfig, OptimizerSpec, load_config
from .data import DatasetError
from .harness import (
    aggregate,
    build_datasets,
    build_model,
    check_comparable,
    read_metrics,
    run_experiment,
    sweep,
    write_summary_csv,
)
from .oracle import gauss_seidel_gap
from .probability import ProbabilityConfig
from .seeding import stream

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "trials", None):
        cfg = cfg.replace(trials=args.trials)
    if getattr(args, "epochs", None):
        cfg = cfg.replace(epochs=args.epochs)
    return cfg


def _floats(s):
    return [float(x) for x in s.split(",") if x]


def cmd_run(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg.output or f"runs/{cfg.name}")
    summary, results = run_experiment(cfg, out, jobs=args.jobs)
    if summary is None:
        for r in results:
            print(f"trial {r.trial} aborted: {r.abort}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"config {cfg.hash()}  trials={summary.trials}  epochs={summary.epochs}")
    print(f"last-{summary.window} mean val acc: {summary.last10_mean:.2f} ± {summary.last10_std:.2f}")
    print(f"max val acc: {summary.max_overall:.2f} (per-trial mean {summary.max_mean:.2f} ± {summary.max_std:.2f})")
    print(f"metrics: {out / 'metrics.jsonl'}")
    if summary.aborted:
        print(f"aborted trials: {summary.aborted}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_aggregate(args) -> int:
    path = Path(args.metrics)
    if not path.exists():
        raise ConfigError(f"metrics file not found: {path}")
    header, _, _ = read_metrics(path)
    summary = aggregate(path)
    for k, v in summary.as_rows():
        print(f"{k:16s} {v}")
    if args.out:
        write_summary_csv(args.out, summary, header.get("config_hash", "unknown"))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if args.baseline:
        base_cfg = load_config(args.baseline)
        check_comparable(cfg, base_cfg, args.axis)
        baseline = base_cfg.optimizer
    else:
        baseline = OptimizerSpec(kind="sgd")
    rows = args.rows.split(",") if args.rows else None
    if rows and args.axis != "scheme":
        rows = [int(r) for r in rows]
    columns = _floats(args.columns) if args.columns else None
    table = sweep(cfg, rows, columns, baseline, axis=args.axis, jobs=args.jobs,
                  progress=lambda c: print(f"  {c.row} @ {c.column}: gain {c.gain:+.2f}", file=sys.stderr))
    print(table.render())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(f"# config_hash={cfg.hash()}\n" + table.to_csv())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    train, _ = build_datasets(cfg)
    model = build_model(cfg, train.sample_shape, train.num_classes)
    store = model.init_params(rng=stream(cfg.seed, 0, "init"))
    idx = stream(cfg.seed, "gradcheck").choice(len(train), size=min(args.batch, len(train)), replace=False)
    report = finite_difference_check(model, store, train.inputs[idx], train.labels[idx], step=args.step)
    ok = report.passed(args.tolerance)
    print(f"m={report.num_params}  max rel err={report.max_rel_error:.3e}  mean={report.mean_rel_error:.3e}  "
          f"worst={report.worst_index} {model.group_index(report.worst_index)}  {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_oracle(args) -> int:
    cfg = _config(args)
    train, _ = build_datasets(cfg)
    model = build_model(cfg, train.sample_shape, train.num_classes)
    store = model.init_params(rng=stream(cfg.seed, 0, "init"))
    prob = ProbabilityConfig("constant", constant_p=args.p) if args.p else cfg.optimizer.probability_config()
    rows = []
    for lr in _floats(args.lrs):
        rep = gauss_seidel_gap(model, store, train, cfg.batch_size, lr, cfg.seed, args.epochs, prob)
        rows.append({"lr": lr, "max_gap": rep.max_gap, "mean_gap": float(rep.gaps.mean())})
        print(f"lr={lr:<10g} max gap={rep.max_gap:.6e}  mean gap={rep.gaps.mean():.6e}")
    for a, b in zip(rows, rows[1:]):
        if a["max_gap"] > 0:
            print(f"gap ratio {b['lr']:g}/{a['lr']:g}: {b['max_gap'] / a['max_gap']:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "oracle.json").write_text(json.dumps(rows, indent=1) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochbatch", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment INI file")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--out", help="output directory (file for aggregate)")

    p = sub.add_parser("run", help="train all trials of one configuration")
    common(p)
    p.add_argument("--jobs", type=int, default=1, help="trials run in parallel processes")
    p.add_argument("--trials", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="compare the configured optimizer with a baseline across an axis")
    common(p)
    p.add_argument("--axis", choices=("fraction", "batch", "scheme", "grid"), default="fraction")
    p.add_argument("--rows", help="comma list: batch sizes, or schemes for --axis scheme")
    p.add_argument("--columns", help="comma list of training fractions")
    p.add_argument("--baseline", help="baseline config (default: plain SGD on the same config)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--trials", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("aggregate", help="summary statistics of a metrics.jsonl file")
    common(p, config_required=False)
    p.add_argument("--metrics", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("gradcheck", help="autodiff vs central differences for the configured model")
    common(p)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("oracle", help="accumulated-batch vs CMA update gap for several step sizes")
    common(p)
    p.add_argument("--lrs", default="0.01,0.005")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--p", type=float, default=0.5, help="constant update probability (0: use config scheme)")
    p.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
