"""Stochastic-batch-size SGD with gradient-statistics update gating."""
from .autodiff import backward, finite_difference_check, forward, loss_and_grad
from .config import ExperimentConfig, load_config, parse_config
from .data import Dataset, load_idx, make_blobs, plan_epoch, subsample
from .models import ModelGraph, ParameterStore, ParamType, build_mlp, build_small_cnn
from .optimizers import (
    SGD,
    GateState,
    StochasticBatchSGD,
    epoch_reset,
    sbs_cma_step,
    sbs_reference_step,
    sgd_step,
)
from .probability import (
    ProbabilityConfig,
    compute_group_stats,
    compute_probabilities,
    sample_indicators,
    sigmoid,
)
from .schedules import LrSchedule, lr_at

__version__ = "0.1.0"
