"""Burgers: standard greedy versus the defect-corrected greedy on a reduced setting.

Uses 300 cells and 40 parameters so it finishes in a few minutes on one core.
Run with ``python3 demos/burgers_greedy.py``.
"""

import numpy as np

from defectrom.models import assemble, default_grid
from defectrom.reduction import (SnapshotCache, defect_subset, estimate_parameters, pod_greedy_ode,
                                 pod_greedy_standard, split_parameters)
from defectrom.timestepping import ImexScheme, SolverConfig


def show(name, res):
    print(f"{name}: converged={res.converged} iterations={res.iterations} n={res.basis.n}")
    for rec in res.records:
        print(f"   it {rec.iteration:2d}  eps {rec.epsilon:.2e}  n {rec.n}")


def main():
    sys, grid = assemble("burgers", n_cells=300), default_grid("burgers")
    cfg = SolverConfig(method="lsoda")
    train, test = split_parameters(sys.domain.sample(40), 0.8, seed=0)
    cache = SnapshotCache(sys, grid, cfg)
    scheme = ImexScheme(1)

    show("standard greedy", pod_greedy_standard(sys, train, 1e-4, 1, scheme, grid, cfg, max_iter=8, cache=cache))
    res = pod_greedy_ode(sys, train, defect_subset(train, 8), 1e-4, 1e-4, 1e-4, 1, scheme, grid, cfg, "rbf",
                         cache=cache)
    show("defect-corrected greedy", res)
    worst = max(e.mean for e in estimate_parameters(res, sys, test))
    print(f"largest test-set mean estimate: {worst:.2e}")


if __name__ == "__main__":
    main()
