"""Reduced-data comparison of SBS (combined scheme) against SGD.

Usage: python3 scripts/run_trend.py [blobs|digits ...] [--trials N] [--epochs N] [--jobs N] [--out DIR]
"""
import argparse
import csv
import time
from dataclasses import asdict
from pathlib import Path

from stochbatch.trend import blobs_config, check_trend, digits_config, format_rows, run_trend

SETTINGS = {"blobs": blobs_config, "digits": digits_config}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("datasets", nargs="*", default=list(SETTINGS), choices=list(SETTINGS))
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="runs/trend")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.datasets:
        cfg = SETTINGS[name](trials=args.trials, epochs=args.epochs)
        start = time.perf_counter()
        rows = run_trend(cfg, jobs=args.jobs, progress=lambda r: print(f"  fraction {r.fraction}: gain {r.gain:+.2f}", flush=True))
        not_worse, monotone = check_trend(rows)
        print(f"{name} ({time.perf_counter() - start:.0f}s, config {cfg.hash()})")
        print(format_rows(rows))
        print(f"SBS >= SGD - 0.5 everywhere: {not_worse}; gain non-decreasing as data shrinks: {monotone}\n")
        with open(out / f"{name}.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(asdict(rows[0])))
            w.writeheader()
            w.writerows(asdict(r) for r in rows)


if __name__ == "__main__":
    main()
