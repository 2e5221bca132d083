"""Learning-rate annealing schemes, evaluated once per epoch."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

SCHEMES = ("constant", "exponential", "staircase", "sigmoid")


def logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class LrSchedule:
    scheme: str = "sigmoid"
    lr_init: float = 0.1
    lr_final: float = 0.001
    steepness: float = 15.0
    decay_power: float = 0.05
    milestones: Sequence[float] = field(default=(0.5, 0.75))
    drop: float = 0.1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown lr scheme {self.scheme!r}; choose from {SCHEMES}")
        if not self.lr_init > 0:
            raise ValueError("lr_init must be positive")
        if self.scheme == "sigmoid" and not self.lr_final >= 0:
            raise ValueError("lr_final must be non-negative")
        if any(not 0 < m < 1 for m in self.milestones):
            raise ValueError("milestone fractions must lie in (0, 1)")
        object.__setattr__(self, "milestones", tuple(sorted(self.milestones)))

    def __call__(self, epoch, total_epochs) -> float:
        return lr_at(self, epoch, total_epochs)


def lr_at(schedule: LrSchedule, epoch, total_epochs) -> float:
    if total_epochs < 1:
        raise ValueError("total_epochs must be >= 1")
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    s = schedule
    if s.scheme == "constant":
        return s.lr_init
    if s.scheme == "exponential":
        return s.lr_init * math.exp(-s.decay_power * epoch)
    if s.scheme == "staircase":
        passed = sum(1 for m in s.milestones if epoch >= m * total_epochs)
        return s.lr_init * s.drop**passed
    # sigmoid: plateau at lr_init, smooth drop around the midpoint, plateau at lr_final
    progress = epoch / total_epochs - 0.5
    return s.lr_final + (s.lr_init - s.lr_final) * (1.0 - logistic(s.steepness * progress))
