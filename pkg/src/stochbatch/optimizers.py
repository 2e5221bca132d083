"""Update rules: SGD (optionally heavy-ball) and stochastic-batch-size SGD.

The stochastic-batch-size optimizer keeps, per parameter, a cumulative
moving average of the universal-batch gradients seen since its last update.
A Bernoulli draw decides whether to apply it; an applied parameter takes a
step k * lr along the average (k = batches accumulated) and starts over.

`sbs_reference_step` is the literal accumulated-batch form: it recomputes
the gradient over the union of accumulated batches at the current iterate.
It is quadratic in cost and exists as a test oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import NonFiniteError, loss_and_grad
from .probability import ProbabilityConfig, compute_group_stats, compute_probabilities, sample_indicators

REFERENCE_MAX_PARAMS = 10_000


def _check_finite(arr, what, groups=None):
    bad = ~np.isfinite(arr)
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        where = f"parameter {j}"
        if groups is not None and hasattr(groups, "groups"):
            where = groups.groups[int(groups.group_id[j])].name
        raise NonFiniteError(f"non-finite {what} in {where}", where)


@dataclass
class MomentumState:
    velocity: np.ndarray
    coefficient: float = 0.0

    @classmethod
    def zeros(cls, m, coefficient):
        if not 0 <= coefficient < 1:
            raise ValueError("momentum must be in [0, 1)")
        return cls(np.zeros(m), float(coefficient))


@dataclass
class GateState:
    """Recurrent state of the CMA optimizer.

    g_tilde: running average gradient; k: batches in the current
    accumulation including the one being folded (starts at 1 and
    returns to 1 after an update); samples: examples accumulated so far.
    """

    g_tilde: np.ndarray
    k: np.ndarray
    samples: np.ndarray
    last_chi: np.ndarray = field(default=None)

    @classmethod
    def fresh(cls, m) -> "GateState":
        return cls(np.zeros(m), np.ones(m, dtype=np.int64), np.zeros(m), np.zeros(m, dtype=bool))

    def copy(self) -> "GateState":
        return GateState(self.g_tilde.copy(), self.k.copy(), self.samples.copy(), self.last_chi.copy())


@dataclass
class RefBatchState:
    """Per-parameter accumulated batch set, stored as the index of the first
    universal batch (within the epoch) not yet consumed by an update."""

    start: np.ndarray

    @classmethod
    def fresh(cls, m) -> "RefBatchState":
        return cls(np.zeros(m, dtype=np.int64))


def sgd_step(params, grad, lr, momentum: Optional[MomentumState] = None, groups=None):
    """w <- w - lr*g, or v <- mu*v + g; w <- w - lr*v with momentum."""
    _check_finite(grad, "gradient", groups)
    if momentum is None:
        params -= lr * grad
    else:
        momentum.velocity *= momentum.coefficient
        momentum.velocity += grad
        params -= lr * momentum.velocity
    return params


def cma_fold(state: GateState, grad, batch_size: int = 1):
    """Fold one universal-batch gradient into every running average.

    Weighting by batch size keeps g_tilde equal to the mean over all
    accumulated examples when the final batch of an epoch is short.
    """
    state.samples += batch_size
    weight = batch_size / state.samples
    state.g_tilde += weight * (grad - state.g_tilde)
    return state


def cma_apply(params, state: GateState, chi, lr, momentum: Optional[MomentumState] = None, groups=None):
    """Apply gated updates with effective step k*lr; reset or advance counters.

    Returns the direction g_tilde used by applied parameters (0 elsewhere).
    """
    chi = np.asarray(chi, dtype=bool)
    _check_finite(state.g_tilde, "accumulated gradient", groups)
    # float masks: multiplying by exactly 1.0 / 0.0 keeps applied entries bitwise
    # identical to the ungated arithmetic and is much cheaper than masked indexing
    on = chi.astype(np.float64)
    off = 1.0 - on
    used = state.g_tilde * on
    if momentum is None:
        params -= on * ((state.k * lr) * state.g_tilde)
    else:
        v = momentum.velocity
        fresh = momentum.coefficient * v + state.k * state.g_tilde
        v *= off
        v += on * fresh
        params -= on * (lr * v)
    state.g_tilde *= off
    state.samples *= off
    state.k = (state.k + 1) * (~chi) + chi
    state.last_chi = chi
    return used


def sbs_cma_step(params, grad, state: GateState, chi, lr, momentum=None, batch_size: int = 1, groups=None):
    cma_fold(state, grad, batch_size)
    cma_apply(params, state, chi, lr, momentum, groups)
    return params, state


def epoch_reset(state):
    """Discard unapplied accumulations at an epoch boundary."""
    if isinstance(state, GateState):
        state.g_tilde[:] = 0.0
        state.k[:] = 1
        state.samples[:] = 0.0
    elif isinstance(state, RefBatchState):
        state.start[:] = 0
    else:
        raise TypeError(f"cannot reset {type(state).__name__}")
    return state


def reference_gradients(model, store, dataset, plan, t, starts, chi):
    """Accumulated-batch gradient at the current iterate for every applied j.

    Parameters sharing a start batch share one forward/backward pass.
    Returns (gradient per parameter, 0 where not applied; k per parameter).
    """
    if model.num_params > REFERENCE_MAX_PARAMS:
        raise ValueError(f"reference step budget exceeded: m={model.num_params} > {REFERENCE_MAX_PARAMS}")
    chi = np.asarray(chi, dtype=bool)
    out = np.zeros(model.num_params)
    k = t - starts + 1
    for s in np.unique(starts[chi]):
        idx = np.concatenate(plan.batches[s : t + 1])
        _, g = loss_and_grad(model, store, dataset.inputs[idx], dataset.labels[idx], update_stats=False)
        sel = chi & (starts == s)
        out[sel] = g[sel]
    return out, k


def sbs_reference_step(model, store, dataset, plan, t, state: RefBatchState, chi, lr):
    """Accumulated-batch update for universal batch `t` of `plan`.

    Mutates `store` and `state`; returns the gradients used (0 where chi=0).
    """
    chi = np.asarray(chi, dtype=bool)
    g, k = reference_gradients(model, store, dataset, plan, t, state.start, chi)
    _check_finite(g, "gradient", model)
    store.data[chi] -= (k[chi] * lr) * g[chi]
    store.touch()
    state.start[chi] = t + 1
    return g


class SGD:
    def __init__(self, num_params, momentum=0.0, groups=None):
        self.momentum = MomentumState.zeros(num_params, momentum) if momentum else None
        self.groups = groups

    def step(self, params, grad, lr, batch_size=None) -> float:
        sgd_step(params, grad, lr, self.momentum, self.groups)
        return 1.0

    def epoch_reset(self):
        pass


class StochasticBatchSGD:
    """Gated CMA optimizer with probabilities from gradient statistics.

    `step` returns the fraction of parameters updated this iteration.
    `trace`, when set to a list, receives (k_used, chi) for each step.
    """

    def __init__(self, model, config: ProbabilityConfig, rng: np.random.Generator, momentum=0.0):
        self.model = model
        self.config = config
        self.rng = rng
        self.state = GateState.fresh(model.num_params)
        self.momentum = MomentumState.zeros(model.num_params, momentum) if momentum else None
        self.last_field = None
        self.trace = None

    def step(self, params, grad, lr, batch_size=1) -> float:
        _check_finite(grad, "gradient", self.model)
        cma_fold(self.state, grad, batch_size)
        source = self.state.g_tilde if self.config.source == "accumulated" else grad
        stats = compute_group_stats(source, self.model)
        fld = compute_probabilities(stats, source, self.model, self.config)
        chi = sample_indicators(fld, self.rng)
        if self.trace is not None:
            self.trace.append((self.state.k.copy(), chi))
        cma_apply(params, self.state, chi, lr, self.momentum, self.model)
        self.last_field = fld
        return float(chi.mean())

    def epoch_reset(self):
        epoch_reset(self.state)
