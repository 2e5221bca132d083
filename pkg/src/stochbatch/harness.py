"""Multi-trial experiment runner, metrics files and summary statistics."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autodiff import NonFiniteError, forward, loss_and_grad
from .config import ExperimentConfig, OptimizerSpec
from .data import (
    Dataset,
    load_csv,
    load_idx,
    make_blobs,
    normalize,
    plan_epoch,
    split_holdout,
    subsample,
)
from .models import ModelGraph, build_mlp, build_small_cnn
from .optimizers import SGD, StochasticBatchSGD
from .seeding import derive_seed, stream

log = logging.getLogger(__name__)


@dataclass
class MetricsRecord:
    trial: int
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    val_accuracy: float
    update_fraction: float
    wall_seconds: float = 0.0

    def to_json(self, with_time=False) -> str:
        d = asdict(self)
        if not with_time:
            d.pop("wall_seconds")
        return json.dumps(d)


@dataclass
class TrialResult:
    trial: int
    records: list
    abort: Optional[str] = None


@dataclass
class Summary:
    window: int
    epochs: int
    trials: int
    last10_per_trial: list
    max_per_trial: list
    last10_mean: float
    last10_std: float
    max_mean: float
    max_std: float
    max_overall: float
    aborted: list = field(default_factory=list)

    def as_rows(self):
        return [
            ("trials", self.trials),
            ("epochs", self.epochs),
            ("window", self.window),
            ("last10_mean", self.last10_mean),
            ("last10_std", self.last10_std),
            ("max_mean", self.max_mean),
            ("max_std", self.max_std),
            ("max_overall", self.max_overall),
            ("aborted_trials", len(self.aborted)),
        ]


# --- construction -------------------------------------------------------


def build_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    if d.kind == "blobs":
        full = make_blobs(d.n, d.classes, d.dim, d.separation, d.seed)
        train, val = split_holdout(full, d.holdout, derive_seed(d.seed, "holdout"))
    elif d.kind == "idx":
        full = load_idx(d.images, d.labels, d.classes if d.classes > 2 else 10)
        if d.limit:
            full = full.take(np.arange(min(d.limit, len(full))))
        if d.val_images:
            train, val = full, load_idx(d.val_images, d.val_labels, full.num_classes)
        else:
            train, val = split_holdout(full, d.holdout, derive_seed(d.seed, "holdout"))
    else:
        full = load_csv(d.path)
        if d.limit:
            full = full.take(np.arange(min(d.limit, len(full))))
        if d.val_path:
            train, val = full, load_csv(d.val_path, full.num_classes)
        else:
            train, val = split_holdout(full, d.holdout, derive_seed(d.seed, "holdout"))
    if d.normalize:
        train, val = normalize(train, val)
    return train, val


def build_model(cfg: ExperimentConfig, sample_shape, num_classes) -> ModelGraph:
    m = cfg.model
    if m.kind == "mlp":
        return build_mlp(sample_shape, list(m.hidden), num_classes, m.batchnorm)
    return build_small_cnn(sample_shape, list(m.channels), num_classes)


def build_optimizer(spec: OptimizerSpec, model, rng, momentum):
    if spec.kind == "sgd":
        return SGD(model.num_params, momentum, model)
    return StochasticBatchSGD(model, spec.probability_config(), rng, momentum)


# --- training -----------------------------------------------------------


def evaluate(model, store, dataset: Dataset, chunk=1000) -> tuple[float, float]:
    """(mean loss, accuracy in %) in inference mode."""
    total, correct = 0.0, 0
    for i in range(0, len(dataset), chunk):
        x = dataset.inputs[i : i + chunk]
        y = dataset.labels[i : i + chunk]
        loss, _ = forward(model, store, x, y, training=False)
        total += float(loss.per_sample.sum())
        correct += int((loss.logits.argmax(axis=1) == y).sum())
    n = len(dataset)
    return total / n, 100.0 * correct / n


def run_trial(cfg: ExperimentConfig, trial: int, train: Dataset, val: Dataset, hook=None) -> TrialResult:
    """One full training run.  `hook(event, **info)` observes optimizer steps."""
    base = cfg.seed
    if cfg.fraction < 1:
        train = subsample(train, cfg.fraction, stream(base, trial, "subsample"))
    model = build_model(cfg, train.sample_shape, train.num_classes)
    store = model.init_params(rng=stream(base, trial, "init"))
    opt = build_optimizer(cfg.optimizer, model, stream(base, trial, "gate"), cfg.effective_momentum)
    data_seed = derive_seed(base, trial, "data")
    bs = min(cfg.batch_size, len(train))
    records = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cfg.schedule(epoch, cfg.epochs)
        plan = plan_epoch(len(train), bs, data_seed, epoch)
        loss_sum, fracs = 0.0, []
        try:
            for t, idx in enumerate(plan.batches):
                loss, grad = loss_and_grad(model, store, train.inputs[idx], train.labels[idx])
                loss_sum += loss.scalar * len(idx)
                fracs.append(opt.step(store.data, grad, lr, len(idx)))
                store.touch()
                if hook is not None:
                    hook("step", trial=trial, epoch=epoch, t=t, plan=plan, optimizer=opt, store=store)
            if cfg.optimizer.epoch_reset:
                opt.epoch_reset()
            if hook is not None:
                hook("epoch_end", trial=trial, epoch=epoch, plan=plan, optimizer=opt, store=store)
            val_loss, val_acc = evaluate(model, store, val, cfg.eval_batch)
            if not (math.isfinite(val_loss) and math.isfinite(loss_sum)):
                raise NonFiniteError("non-finite loss", "loss")
        except NonFiniteError as exc:
            log.warning("trial %d aborted at epoch %d: %s", trial, epoch, exc)
            return TrialResult(trial, records, f"epoch {epoch}: {exc}")
        records.append(
            MetricsRecord(
                trial,
                epoch,
                lr,
                loss_sum / len(train),
                val_loss,
                val_acc,
                float(np.mean(fracs)),
                time.perf_counter() - t0,
            )
        )
    return TrialResult(trial, records)


def _trial_job(args):
    cfg, trial, train, val = args
    return run_trial(cfg, trial, train, val)


def run_trials(cfg: ExperimentConfig, jobs: int = 1, datasets=None) -> list[TrialResult]:
    train, val = datasets if datasets is not None else build_datasets(cfg)
    args = [(cfg, t, train, val) for t in range(cfg.trials)]
    if jobs > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, cfg.trials)) as pool:
            return list(pool.map(_trial_job, args))
    return [_trial_job(a) for a in args]


# --- files --------------------------------------------------------------


def header_line(cfg: ExperimentConfig) -> str:
    return json.dumps({"config_hash": cfg.hash(), "config": cfg.to_dict()}, sort_keys=True, default=list)


def write_metrics(path, cfg: ExperimentConfig, results: Sequence[TrialResult]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [header_line(cfg)]
    for res in sorted(results, key=lambda r: r.trial):
        lines.extend(r.to_json(cfg.record_time) for r in res.records)
        if res.abort:
            lines.append(json.dumps({"trial": res.trial, "abort": res.abort}))
    path.write_text("\n".join(lines) + "\n")


def read_metrics(path) -> tuple[dict, list[MetricsRecord], list]:
    header, records, aborts = {}, [], []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if "config_hash" in obj:
            header = obj
        elif "abort" in obj:
            aborts.append(obj)
        else:
            records.append(MetricsRecord(**obj))
    return header, records, aborts


def write_summary_csv(path, summary: Summary, config_hash: str):
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["statistic", "value"])
    for k, v in summary.as_rows():
        w.writerow([k, repr(v) if isinstance(v, float) else v])
    w.writerow([])
    w.writerow(["trial", "last10_mean", "max"])
    for i, (a, b) in enumerate(zip(summary.last10_per_trial, summary.max_per_trial)):
        w.writerow([i, repr(a), repr(b)])
    Path(path).write_text(buf.getvalue())


# --- statistics ---------------------------------------------------------


def last_window(epochs: int) -> int:
    return max(1, math.ceil(0.1 * epochs - 1e-9))


def aggregate(source) -> Summary:
    """Last-10% mean accuracy per trial, then mean/std over trials; and maxima.

    `source` is a metrics path, or a list of MetricsRecord / TrialResult.
    Standard deviations are population (ddof=0) over trials.
    """
    aborted = []
    if isinstance(source, (str, Path)):
        _, records, aborts = read_metrics(source)
        aborted = [a["trial"] for a in aborts]
    else:
        records = []
        for item in source:
            if isinstance(item, TrialResult):
                records.extend(item.records)
                if item.abort:
                    aborted.append(item.trial)
            else:
                records.append(item)
    if not records:
        raise ValueError("no metrics records to aggregate")
    by_trial: dict[int, list] = {}
    for r in records:
        by_trial.setdefault(r.trial, []).append(r)
    complete = {t: sorted(rs, key=lambda r: r.epoch) for t, rs in by_trial.items() if t not in aborted}
    if not complete:
        raise ValueError("no complete trial to aggregate")
    epochs = max(len(rs) for rs in complete.values())
    window = last_window(epochs)
    last10 = [float(np.mean([r.val_accuracy for r in rs[-window:]])) for rs in complete.values()]
    maxima = [float(max(r.val_accuracy for r in rs)) for rs in complete.values()]
    return Summary(
        window=window,
        epochs=epochs,
        trials=len(complete),
        last10_per_trial=last10,
        max_per_trial=maxima,
        last10_mean=float(np.mean(last10)),
        last10_std=float(np.std(last10)),
        max_mean=float(np.mean(maxima)),
        max_std=float(np.std(maxima)),
        max_overall=float(max(maxima)),
        aborted=aborted,
    )


def mean_curves(results: Sequence[TrialResult]) -> dict:
    """Per-epoch averages across trials (for plotting learning curves)."""
    epochs = min(len(r.records) for r in results)
    keys = ("train_loss", "val_loss", "val_accuracy")
    return {
        k: [float(np.mean([getattr(r.records[e], k) for r in results])) for e in range(epochs)]
        for k in keys
    }


def run_experiment(cfg: ExperimentConfig, out=None, jobs: int = 1, datasets=None):
    """Run every trial, write metrics.jsonl and summary.csv under `out`.

    The summary is None when every trial aborted.
    """
    out = Path(out or cfg.output or f"runs/{cfg.name}")
    results = run_trials(cfg, jobs, datasets)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / "metrics.jsonl", cfg, results)
    if all(r.abort for r in results):
        # nothing to summarize; partial metrics stay on disk
        return None, results
    summary = aggregate(results)
    write_summary_csv(out / "summary.csv", summary, cfg.hash())
    return summary, results


# --- sweeps -------------------------------------------------------------


@dataclass
class SweepCell:
    row: object
    column: object
    ours: Summary
    baseline: Summary

    @property
    def gain(self) -> float:
        return self.ours.last10_mean - self.baseline.last10_mean

    @property
    def gain_std(self) -> float:
        # trials share seeds across the two arms, so gains are paired
        diffs = np.subtract(self.ours.last10_per_trial, self.baseline.last10_per_trial)
        return float(np.std(diffs))


@dataclass
class SweepTable:
    row_name: str
    column_name: str
    rows: list
    columns: list
    cells: dict

    def render(self) -> str:
        head = [f"{self.row_name}\\{self.column_name}"] + [str(c) for c in self.columns]
        lines = [" | ".join(f"{h:>20s}" for h in head)]
        for r in self.rows:
            parts = [f"{str(r):>20s}"]
            for c in self.columns:
                cell = self.cells[(r, c)]
                parts.append(f"{cell.ours.last10_mean:6.2f} ({cell.gain:+.2f}±{cell.gain_std:.2f})".rjust(20))
            lines.append(" | ".join(parts))
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.row_name, self.column_name, "ours_mean", "ours_std", "baseline_mean", "baseline_std", "gain", "gain_std"])
        for r in self.rows:
            for c in self.columns:
                cell = self.cells[(r, c)]
                w.writerow([r, c, repr(cell.ours.last10_mean), repr(cell.ours.last10_std),
                            repr(cell.baseline.last10_mean), repr(cell.baseline.last10_std),
                            repr(cell.gain), repr(cell.gain_std)])
        return buf.getvalue()


def check_comparable(a: ExperimentConfig, b: ExperimentConfig, axis: str):
    """Raise unless `a` and `b` differ only in the optimizer, the axis, and output."""
    ignore = {"optimizer", "output", "name", {"fraction": "fraction", "batch": "batch_size"}.get(axis, "")}
    da, db = a.to_dict(), b.to_dict()
    diff = sorted(k for k in da if k not in ignore and da[k] != db[k])
    if diff:
        raise ValueError(f"configs differ outside the swept axis/optimizer: {', '.join(diff)}")


def sweep(
    cfg: ExperimentConfig,
    rows: Sequence = None,
    columns: Sequence = None,
    baseline: Optional[OptimizerSpec] = None,
    axis: str = "grid",
    jobs: int = 1,
    progress=None,
) -> SweepTable:
    """Table of (ours vs baseline) summaries.

    axis "grid": rows are batch sizes, columns training fractions (momentum
    follows the batch size unless set explicitly).  axis "fraction"/"batch":
    a single row/column of the grid.  axis "scheme": rows are probability
    schemes for the SBS optimizer, column the configured fraction.
    """
    baseline = baseline or OptimizerSpec(kind="sgd")
    if axis == "fraction":
        rows, columns = [cfg.batch_size], list(columns or (0.5, 0.25, 0.125))
    elif axis == "batch":
        rows, columns = list(rows or (16, 32, 64, 128)), [cfg.fraction]
    elif axis == "scheme":
        rows, columns = list(rows or ("local", "global", "combined")), [cfg.fraction]
    elif axis == "grid":
        rows, columns = list(rows or (16, 32, 64, 128)), list(columns or (0.5, 0.25, 0.125))
    else:
        raise ValueError(f"unknown sweep axis {axis!r}")
    datasets = build_datasets(cfg)
    cells = {}
    base_cache = {}
    for r in rows:
        for c in columns:
            if axis == "scheme":
                ours_cfg = cfg.replace(optimizer=_with(cfg.optimizer, kind="sbs", scheme=r), fraction=c)
                key = c
            else:
                ours_cfg = cfg.replace(batch_size=int(r), fraction=float(c))
                key = (r, c)
            base_cfg = ours_cfg.replace(optimizer=baseline)
            if key not in base_cache:
                base_cache[key] = aggregate(run_trials(base_cfg, jobs, datasets))
            ours = aggregate(run_trials(ours_cfg, jobs, datasets))
            cells[(r, c)] = SweepCell(r, c, ours, base_cache[key])
            if progress:
                progress(cells[(r, c)])
    row_name = "scheme" if axis == "scheme" else "batch"
    return SweepTable(row_name, "fraction", rows, columns, cells)


def _with(spec: OptimizerSpec, **kw) -> OptimizerSpec:
    return replace(spec, **kw)
