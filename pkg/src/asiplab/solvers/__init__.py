"""The six distributed solvers, keyed by their CLI names."""

from asiplab.solvers.admm import asip_admm_worker, bsp_admm, run_asip_admm
from asiplab.solvers.common import SolverHyperparams, SolverResult, default_hyperparams
from asiplab.solvers.dual_averaging import asip_dual_averaging_worker, run_asip_dual_averaging
from asiplab.solvers.gd import bsp_gd, full_gradient, pooled_gd_oracle
from asiplab.solvers.sgd import asip_sgd_worker, avg_solver, run_asip_sgd

SOLVERS = {
    "asip-sgd": run_asip_sgd,
    "asip-dualavg": run_asip_dual_averaging,
    "asip-admm": run_asip_admm,
    "bsp-gd": bsp_gd,
    "bsp-admm": bsp_admm,
    "avg": avg_solver,
}

ASYNC_ALGORITHMS = ("asip-sgd", "asip-dualavg", "asip-admm", "avg")


def solve(algorithm, data, spec, hp=None, runtime=None):
    if algorithm not in SOLVERS:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {sorted(SOLVERS)}")
    return SOLVERS[algorithm](data, spec, hp or default_hyperparams(algorithm), runtime)


__all__ = [
    "ASYNC_ALGORITHMS",
    "SOLVERS",
    "SolverHyperparams",
    "SolverResult",
    "asip_admm_worker",
    "asip_dual_averaging_worker",
    "asip_sgd_worker",
    "avg_solver",
    "bsp_admm",
    "bsp_gd",
    "full_gradient",
    "pooled_gd_oracle",
    "run_asip_admm",
    "run_asip_dual_averaging",
    "run_asip_sgd",
    "solve",
    "default_hyperparams",
]
