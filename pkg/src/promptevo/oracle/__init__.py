"""Learned segmentation-quality regressor: candidate data, network, training, persistence."""
from .candidates import (
    DEFAULT_DELTAS,
    Candidate,
    band_prompts,
    build_candidate_set,
    build_candidates,
    levelset_perturb,
    outside_prompts,
)
from .regressor import (
    N_TRAINABLE,
    RegressorParams,
    init_params,
    regressor_backward,
    regressor_forward,
    zero_params,
)
from .train import TrainingConfig, TrainingResult, predict, train_regressor
from .weights import load_params, save_params

__all__ = [
    "DEFAULT_DELTAS",
    "N_TRAINABLE",
    "Candidate",
    "RegressorParams",
    "TrainingConfig",
    "TrainingResult",
    "band_prompts",
    "build_candidate_set",
    "build_candidates",
    "init_params",
    "levelset_perturb",
    "load_params",
    "outside_prompts",
    "predict",
    "regressor_backward",
    "regressor_forward",
    "save_params",
    "train_regressor",
    "zero_params",
]
