"""Defect extraction, compression and surrogate learning."""

from .defect import (DefectTensor, GridMismatchError, build_defect_tensor, compute_defect_trajectory,
                     truncation_rank, two_stage_svd)
from .fnn import DivergenceError, FnnHyper, FnnModel, fnn_eval, fnn_eval_all, fnn_train
from .model import SURROGATES, ClosureModel, closure_eval, closure_update, train_closure
from .rbf import RbfConditioningError, RbfConditioningWarning, RbfInterpolant, rbf_eval, rbf_eval_all, rbf_fit

__all__ = [
    "DefectTensor", "GridMismatchError", "build_defect_tensor", "compute_defect_trajectory", "truncation_rank",
    "two_stage_svd", "DivergenceError", "FnnHyper", "FnnModel", "fnn_eval", "fnn_eval_all", "fnn_train",
    "SURROGATES", "ClosureModel", "closure_eval", "closure_update", "train_closure", "RbfConditioningError",
    "RbfConditioningWarning", "RbfInterpolant", "rbf_eval", "rbf_eval_all", "rbf_fit",
]
