"""Experiment configuration: an INI file with one section per component.

Example::

    [experiment]
    epochs = 30
    trials = 10
    seed = 0
    batch_size = 16
    momentum = auto        ; paired default: 16->0, 32->0.3, 64->0.6, 128->0.9
    fraction = 1.0

    [data]
    kind = blobs           ; blobs | idx | csv
    n = 3000
    classes = 2
    dim = 20
    separation = 2.5
    holdout = 1000

    [model]
    kind = mlp             ; mlp | cnn
    hidden = 64, 32

    [optimizer]
    kind = sbs             ; sgd | sbs
    scheme = combined
    alpha = 0.1
    lambda = -4

    [schedule]
    scheme = sigmoid
    lr_init = 0.1
    lr_final = 0.001

See README.md for the complete key list.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .probability import SCHEMES as PROB_SCHEMES
from .probability import SOURCES, ProbabilityConfig
from .schedules import LrSchedule

MOMENTUM_FOR_BATCH = {16: 0.0, 32: 0.3, 64: 0.6, 128: 0.9}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataSpec:
    kind: str = "blobs"
    n: int = 3000
    classes: int = 2
    dim: int = 20
    separation: float = 2.5
    seed: int = 1
    holdout: float = 1000
    images: Optional[str] = None
    labels: Optional[str] = None
    val_images: Optional[str] = None
    val_labels: Optional[str] = None
    path: Optional[str] = None
    val_path: Optional[str] = None
    limit: Optional[int] = None
    normalize: bool = False


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "mlp"
    hidden: tuple = (8,)
    batchnorm: bool = False
    channels: tuple = (4,)


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "sgd"
    scheme: str = "combined"
    alpha: float = 0.1
    lam: float = -4.0
    constant_p: float = 1.0
    source: str = "accumulated"
    epoch_reset: bool = True

    def probability_config(self) -> ProbabilityConfig:
        return ProbabilityConfig(self.scheme, self.alpha, self.lam, self.constant_p, self.source)


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSpec = field(default_factory=DataSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    schedule: LrSchedule = field(default_factory=LrSchedule)
    epochs: int = 10
    trials: int = 1
    seed: int = 0
    batch_size: int = 16
    momentum: Optional[float] = None  # None: paired default for the batch size
    fraction: float = 1.0
    eval_batch: int = 1000
    record_time: bool = False
    name: str = "experiment"
    output: Optional[str] = None

    def __post_init__(self):
        if not 0 < self.fraction <= 1:
            raise ConfigError(f"fraction must be in (0, 1], got {self.fraction}")
        if self.epochs < 1 or self.trials < 1 or self.batch_size < 1:
            raise ConfigError("epochs, trials and batch_size must be >= 1")
        if self.momentum is not None and not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")

    @property
    def effective_momentum(self) -> float:
        if self.momentum is not None:
            return self.momentum
        return MOMENTUM_FOR_BATCH.get(self.batch_size, 0.0)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Digest of every field except the output location."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# --- parsing ------------------------------------------------------------

_SECTIONS = ("experiment", "data", "model", "optimizer", "schedule")


def _line_numbers(text: str) -> dict:
    where, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
        elif section and line and line[0] not in "#;" and ("=" in line or ":" in line):
            key = line.split("=", 1)[0].split(":", 1)[0].strip().lower()
            where[(section, key)] = no
    return where


class _Reader:
    def __init__(self, parser, lines, source):
        self.parser, self.lines, self.source = parser, lines, source
        self.used = set()

    def _fail(self, section, key, msg):
        line = self.lines.get((section, key))
        loc = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{loc}: [{section}] {key}: {msg}")

    def get(self, section, key, conv, default):
        if not self.parser.has_option(section, key):
            return default
        self.used.add((section, key))
        raw = self.parser.get(section, key).strip()
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            self._fail(section, key, f"bad value {raw!r} ({exc})")

    def choice(self, section, key, options, default):
        val = self.get(section, key, str, default)
        if val not in options:
            self._fail(section, key, f"{val!r} not one of {', '.join(options)}")
        return val


def _bool(s):
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _ints(s):
    return tuple(int(x) for x in s.replace(",", " ").split())


def _floats(s):
    return tuple(float(x) for x in s.replace(",", " ").split())


def _opt_str(s):
    return s or None


def parse_config(text: str, source: str = "<config>", base_dir: Optional[Path] = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    for sec in parser.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{sec}]")
    r = _Reader(parser, _line_numbers(text), source)

    def path(s):
        if not s:
            return None
        p = Path(s)
        if base_dir is not None and not p.is_absolute() and not p.exists():
            p = base_dir / p
        return str(p)

    d = DataSpec()
    data = DataSpec(
        kind=r.choice("data", "kind", ("blobs", "idx", "csv"), d.kind),
        n=r.get("data", "n", int, d.n),
        classes=r.get("data", "classes", int, d.classes),
        dim=r.get("data", "dim", int, d.dim),
        separation=r.get("data", "separation", float, d.separation),
        seed=r.get("data", "seed", int, d.seed),
        holdout=r.get("data", "holdout", float, d.holdout),
        images=r.get("data", "images", path, None),
        labels=r.get("data", "labels", path, None),
        val_images=r.get("data", "val_images", path, None),
        val_labels=r.get("data", "val_labels", path, None),
        path=r.get("data", "path", path, None),
        val_path=r.get("data", "val_path", path, None),
        limit=r.get("data", "limit", int, None),
        normalize=r.get("data", "normalize", _bool, d.normalize),
    )
    if data.kind == "idx" and not (data.images and data.labels):
        r._fail("data", "images", "idx data needs both images and labels paths")
    if data.kind == "csv" and not data.path:
        r._fail("data", "path", "csv data needs a path")

    m = ModelSpec()
    model = ModelSpec(
        kind=r.choice("model", "kind", ("mlp", "cnn"), m.kind),
        hidden=r.get("model", "hidden", _ints, m.hidden),
        batchnorm=r.get("model", "batchnorm", _bool, m.batchnorm),
        channels=r.get("model", "channels", _ints, m.channels),
    )

    o = OptimizerSpec()
    opt = OptimizerSpec(
        kind=r.choice("optimizer", "kind", ("sgd", "sbs"), o.kind),
        scheme=r.choice("optimizer", "scheme", PROB_SCHEMES, o.scheme),
        alpha=r.get("optimizer", "alpha", float, o.alpha),
        lam=r.get("optimizer", "lambda", float, o.lam),
        constant_p=r.get("optimizer", "constant_p", float, o.constant_p),
        source=r.choice("optimizer", "source", SOURCES, o.source),
        epoch_reset=r.get("optimizer", "epoch_reset", _bool, o.epoch_reset),
    )
    if not 0 < opt.constant_p <= 1:
        r._fail("optimizer", "constant_p", "must be in (0, 1]")

    s = LrSchedule()
    try:
        sched = LrSchedule(
            scheme=r.choice("schedule", "scheme", ("constant", "exponential", "staircase", "sigmoid"), s.scheme),
            lr_init=r.get("schedule", "lr_init", float, s.lr_init),
            lr_final=r.get("schedule", "lr_final", float, s.lr_final),
            steepness=r.get("schedule", "steepness", float, s.steepness),
            decay_power=r.get("schedule", "decay_power", float, s.decay_power),
            milestones=r.get("schedule", "milestones", _floats, s.milestones),
            drop=r.get("schedule", "drop", float, s.drop),
        )
    except ValueError as exc:
        raise ConfigError(f"{source}: [schedule] {exc}") from exc

    e = ExperimentConfig()
    mom = r.get("experiment", "momentum", lambda v: None if v == "auto" else float(v), None)
    try:
        cfg = ExperimentConfig(
            data=data,
            model=model,
            optimizer=opt,
            schedule=sched,
            epochs=r.get("experiment", "epochs", int, e.epochs),
            trials=r.get("experiment", "trials", int, e.trials),
            seed=r.get("experiment", "seed", int, e.seed),
            batch_size=r.get("experiment", "batch_size", int, e.batch_size),
            momentum=mom,
            fraction=r.get("experiment", "fraction", float, e.fraction),
            eval_batch=r.get("experiment", "eval_batch", int, e.eval_batch),
            record_time=r.get("experiment", "record_time", _bool, e.record_time),
            name=r.get("experiment", "name", str, e.name),
            output=r.get("experiment", "output", _opt_str, None),
        )
    except ConfigError as exc:
        raise ConfigError(f"{source}: [experiment] {exc}") from exc

    for sec in parser.sections():
        for key in parser.options(sec):
            if (sec, key) not in r.used:
                r._fail(sec, key, "unknown key")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path), path.parent)
