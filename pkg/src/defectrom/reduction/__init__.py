"""Reduced bases, hyperreduction, reduced models and greedy sampling."""

from .basis import ReducedBasis, orthonormal_extend, pod_update
from .deim import DeimModel, DeimRankError, deim_build, deim_indices
from .greedy import (GreedyRecord, GreedyResult, SnapshotCache, defect_subset, estimate_parameters,
                     pod_greedy_ode, pod_greedy_standard, split_parameters, train_defect_closure)
from .rom import CromSolution, Rom, galerkin_project, solve_crom, solve_rom_blackbox

__all__ = [
    "ReducedBasis", "orthonormal_extend", "pod_update", "DeimModel", "DeimRankError", "deim_build", "deim_indices",
    "GreedyRecord", "GreedyResult", "SnapshotCache", "defect_subset", "estimate_parameters", "pod_greedy_ode",
    "pod_greedy_standard", "split_parameters", "train_defect_closure", "CromSolution", "Rom", "galerkin_project", "solve_crom", "solve_rom_blackbox",
]
