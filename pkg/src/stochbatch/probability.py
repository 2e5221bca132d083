"""Per-parameter update probabilities from gradient-magnitude statistics.

Gradient magnitudes are standardized within each (layer, type) group
(local score v_j) and the group means are standardized across groups
(global offset).  Both feed one logistic gate:

    p_j = 1 / (1 + exp(-alpha * v_j - lam * mu_tilde[group(j)]))

`local` fixes lam = 0, `global` fixes alpha = 0, `combined` uses both.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import NonFiniteError

SCHEMES = ("local", "global", "combined", "constant")
SOURCES = ("accumulated", "batch")


@dataclass(frozen=True)
class ProbabilityConfig:
    scheme: str = "combined"
    alpha: float = 0.1
    lam: float = -4.0
    constant_p: float = 1.0
    # gradient fed to the statistics: the running CMA estimate or the raw batch gradient
    source: str = "accumulated"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown probability scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown gradient source {self.source!r}; choose from {SOURCES}")
        if not 0 < self.constant_p <= 1:
            raise ValueError("constant_p must be in (0, 1]")


@dataclass
class GroupStats:
    mean: np.ndarray  # per group, of |g|
    std: np.ndarray  # per group, population
    sizes: np.ndarray
    global_mean: float
    global_std: float


@dataclass
class ProbabilityField:
    p: np.ndarray
    v: np.ndarray
    mu_tilde: np.ndarray  # per group
    gamma: np.ndarray  # per group


def sigmoid(x, alpha=1.0, gamma=0.0):
    """1 / (1 + exp(-alpha*x - gamma)); saturates cleanly to 0/1 on overflow."""
    z = alpha * np.asarray(x, dtype=np.float64) + gamma
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-z))
    return out if np.ndim(out) else float(out)


def _layout(groups):
    """(group id per parameter, start offsets or None).

    Offsets are returned only when every group is a contiguous run in id
    order, which allows segment reductions instead of scatter-adds.
    """
    if hasattr(groups, "group_id"):
        return groups.group_id, getattr(groups, "group_starts", None)
    groups = list(groups)
    if groups and hasattr(groups[0], "offset"):
        gid = np.empty(sum(g.length for g in groups), dtype=np.int64)
        for i, g in enumerate(groups):
            gid[g.offset : g.offset + g.length] = i
    else:
        gid = np.asarray(groups, dtype=np.int64)
    starts = np.flatnonzero(np.r_[True, gid[1:] != gid[:-1]])
    if not np.array_equal(gid[starts], np.arange(starts.size)):
        starts = None
    return gid, starts


def group_ids(groups) -> np.ndarray:
    """Accepts a ModelGraph, a sequence of ParameterGroups, or an id array."""
    return _layout(groups)[0]


def _group_sums(values, gid, starts):
    if starts is not None:
        return np.add.reduceat(values, starts)
    return np.bincount(gid, weights=values)


def _expand(per_group, gid, starts, sizes):
    if starts is not None:
        return np.repeat(per_group, sizes)
    return per_group[gid]


def _inverse(std):
    # zero spread: standardization undefined, scores collapse to the symmetric value 0
    safe = np.where(std > 0, std, 1.0)
    return np.where(std > 0, 1.0 / safe, 0.0)


def compute_group_stats(grad, groups) -> GroupStats:
    gid, starts = _layout(groups)
    a = np.abs(np.asarray(grad, dtype=np.float64))
    if a.shape != gid.shape:
        raise ValueError(f"gradient has {a.size} entries, groups cover {gid.size}")
    sizes = np.bincount(gid)
    assert np.all(sizes > 0), "empty parameter group"
    mean = _group_sums(a, gid, starts) / sizes
    dev = a - _expand(mean, gid, starts, sizes)
    std = np.sqrt(_group_sums(dev * dev, gid, starts) / sizes)
    w = sizes.astype(np.float64)
    gmean = float(np.dot(w, mean) / w.sum())
    gstd = float(np.sqrt(np.dot(w, (mean - gmean) ** 2) / w.sum()))
    return GroupStats(mean, std, sizes, gmean, gstd)


def compute_probabilities(stats: GroupStats, grad, groups, config: ProbabilityConfig) -> ProbabilityField:
    gid, starts = _layout(groups)
    if not (np.all(np.isfinite(stats.mean)) and np.all(np.isfinite(stats.std))
            and np.isfinite(stats.global_mean) and np.isfinite(stats.global_std)):
        raise NonFiniteError("non-finite gradient statistics", "probability")
    a = np.abs(np.asarray(grad, dtype=np.float64))
    sizes = stats.sizes
    v = (a - _expand(stats.mean, gid, starts, sizes)) * _expand(_inverse(stats.std), gid, starts, sizes)
    mu_tilde = (stats.mean - stats.global_mean) * _inverse(np.asarray(stats.global_std))

    if config.scheme == "constant":
        p = np.full(a.shape, config.constant_p)
        return ProbabilityField(p, v, mu_tilde, np.zeros_like(mu_tilde))
    alpha, lam = config.alpha, config.lam
    if config.scheme == "local":
        lam = 0.0
    elif config.scheme == "global":
        alpha = 0.0
    gamma = lam * mu_tilde
    p = sigmoid(v, alpha, _expand(gamma, gid, starts, sizes))
    return ProbabilityField(p, v, mu_tilde, gamma)


def update_probabilities(grad, groups, config: ProbabilityConfig) -> ProbabilityField:
    return compute_probabilities(compute_group_stats(grad, groups), grad, groups, config)


def sample_indicators(p, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli(p_j) draws as a bool array."""
    p = p.p if isinstance(p, ProbabilityField) else np.asarray(p, dtype=np.float64)
    return rng.random(p.shape) < p
