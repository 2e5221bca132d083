"""Reduced-data generalization comparison: SBS (combined scheme) vs SGD.

Two desk-scale settings share one protocol: 2-hidden-layer MLP, 30 epochs,
sigmoid-annealed learning rate 0.1 -> 0.001, batch size 16, momentum 0,
and the training set cut to 1, 1/2, 1/4 and 1/8 of its size.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import DataSpec, ExperimentConfig, ModelSpec, OptimizerSpec
from .harness import aggregate, build_datasets, run_trials

FRACTIONS = (1.0, 0.5, 0.25, 0.125)
DATA_DIR = Path(__file__).resolve().parents[2] / "data"

SGD_SPEC = OptimizerSpec(kind="sgd")
SBS_SPEC = OptimizerSpec(kind="sbs", scheme="combined", alpha=0.1, lam=-4.0)


def blobs_config(trials=10, epochs=30, seed=0) -> ExperimentConfig:
    # 3000 points, 1000 held out for validation -> 2000 training examples
    return ExperimentConfig(
        data=DataSpec(kind="blobs", n=3000, classes=2, dim=20, separation=2.5, seed=11, holdout=1000),
        model=ModelSpec(kind="mlp", hidden=(32, 32)),
        epochs=epochs,
        trials=trials,
        seed=seed,
        batch_size=16,
        momentum=0.0,
        name="trend-blobs",
    )


def digits_config(trials=10, epochs=30, seed=0, data_dir=DATA_DIR) -> ExperimentConfig:
    # 5000 MNIST images, 1000 held out -> 4000 training examples
    return ExperimentConfig(
        data=DataSpec(
            kind="idx",
            images=str(Path(data_dir) / "mnist5k-images-idx3-ubyte.gz"),
            labels=str(Path(data_dir) / "mnist5k-labels-idx1-ubyte.gz"),
            classes=10,
            seed=11,
            holdout=1000,
            normalize=True,
        ),
        model=ModelSpec(kind="mlp", hidden=(32, 32)),
        epochs=epochs,
        trials=trials,
        seed=seed,
        batch_size=16,
        momentum=0.0,
        name="trend-digits",
    )


@dataclass
class TrendRow:
    fraction: float
    sgd: float
    sbs: float
    sgd_std: float
    sbs_std: float
    gain: float
    gain_std: float


def run_trend(cfg: ExperimentConfig, fractions=FRACTIONS, jobs=1, progress=None) -> list[TrendRow]:
    datasets = build_datasets(cfg)
    rows = []
    for f in fractions:
        summaries = {}
        for name, spec in (("sgd", SGD_SPEC), ("sbs", SBS_SPEC)):
            results = run_trials(cfg.replace(optimizer=spec, fraction=f), jobs, datasets)
            summaries[name] = aggregate(results)
        a, b = summaries["sgd"], summaries["sbs"]
        gains = np.subtract(b.last10_per_trial, a.last10_per_trial)
        row = TrendRow(f, a.last10_mean, b.last10_mean, a.last10_std, b.last10_std,
                       float(gains.mean()), float(gains.std()))
        rows.append(row)
        if progress:
            progress(row)
    return rows


def check_trend(rows: list[TrendRow], slack=0.5) -> tuple[bool, bool]:
    """(SBS never more than `slack` points below SGD, gain non-decreasing within std)."""
    not_worse = all(r.sbs >= r.sgd - slack for r in rows)
    monotone = all(
        nxt.gain >= cur.gain - max(cur.gain_std, nxt.gain_std) for cur, nxt in zip(rows, rows[1:])
    )
    return not_worse, monotone


def format_rows(rows) -> str:
    lines = [f"{'fraction':>8s} {'SGD':>14s} {'SBS':>14s} {'gain':>14s}"]
    for r in rows:
        lines.append(
            f"{r.fraction:8.3f} {r.sgd:7.2f} ±{r.sgd_std:5.2f} {r.sbs:7.2f} ±{r.sbs_std:5.2f} {r.gain:+7.2f} ±{r.gain_std:5.2f}"
        )
    return "\n".join(lines)
