"""Side-by-side comparison of the accumulated-batch update and its CMA form.

Both rules are evaluated from the same iterate at every step: the CMA
optimizer advances the trajectory, and for each applied parameter the
accumulated-batch gradient is recomputed at the current weights.  The
difference between the two directions is the Gauss-Seidel discrepancy;
it vanishes when the step size is 0 and grows linearly with it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import loss_and_grad
from .data import plan_epoch
from .optimizers import GateState, cma_apply, cma_fold, epoch_reset, reference_gradients
from .probability import ProbabilityConfig, sample_indicators, update_probabilities
from .seeding import derive_seed, stream


@dataclass
class GapReport:
    lr: float
    gaps: np.ndarray  # per universal batch: max |reference - cma| over applied parameters
    applied: np.ndarray  # per universal batch: number of applied parameters

    @property
    def max_gap(self) -> float:
        return float(self.gaps.max())


def gauss_seidel_gap(
    model,
    store,
    dataset,
    batch_size: int,
    lr: float,
    seed: int,
    epochs: int = 1,
    config: ProbabilityConfig = ProbabilityConfig("constant", constant_p=0.5),
) -> GapReport:
    store = store.copy()
    state = GateState.fresh(model.num_params)
    rng = stream(seed, "gate")
    data_seed = derive_seed(seed, "data")
    gaps, applied = [], []
    for epoch in range(epochs):
        plan = plan_epoch(len(dataset), batch_size, data_seed, epoch)
        for t, idx in enumerate(plan.batches):
            _, g = loss_and_grad(model, store, dataset.inputs[idx], dataset.labels[idx], update_stats=False)
            cma_fold(state, g, len(idx))
            chi = sample_indicators(update_probabilities(state.g_tilde, model, config), rng)
            starts = t - state.k + 1
            ref, _ = reference_gradients(model, store, dataset, plan, t, starts, chi)
            used = cma_apply(store.data, state, chi, lr)
            store.touch()
            gaps.append(float(np.abs(ref - used).max()) if chi.any() else 0.0)
            applied.append(int(chi.sum()))
        epoch_reset(state)
    return GapReport(lr, np.array(gaps), np.array(applied))
