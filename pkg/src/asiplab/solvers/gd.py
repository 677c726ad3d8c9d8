"""Bulk-synchronous full-batch gradient descent."""

from __future__ import annotations

import numpy as np

from asiplab import kernels
from asiplab.core import PartitionedDataset
from asiplab.objective import ObjectiveSpec, full_objective, reg_subgradient
from asiplab.runtime import RuntimeConfig, run_bsp
from asiplab.solvers.common import SolverHyperparams, SolverResult, make_snapshot


def full_gradient(spec: ObjectiveSpec, w, data: PartitionedDataset) -> np.ndarray:
    """Average loss gradient over every record plus ``lam`` times the regularizer subgradient.

    Per-partition sums are reduced in partition order.
    """
    total = np.zeros(data.dimension)
    for blk in data.blocks:
        part = np.zeros(data.dimension)
        kernels.loss_grad_sum(blk.data, blk.indices, blk.indptr, blk.labels, w, spec.loss.code, part)
        total += part
    return total / data.total_count + spec.lam * reg_subgradient(spec.reg, w)


def bsp_gd(data: PartitionedDataset, spec: ObjectiveSpec, hp: SolverHyperparams,
           runtime: RuntimeConfig) -> SolverResult:
    """One exact full-batch gradient step per round, with step ``eta0 / sqrt(t)``."""
    d = data.dimension
    state = {"w": np.zeros(d), "t": 1}

    def task(i):
        blk = data.blocks[i]
        part = np.zeros(d)
        kernels.loss_grad_sum(blk.data, blk.indices, blk.indptr, blk.labels, state["w"],
                              spec.loss.code, part)
        return part, max(blk.n_rows, 1)

    def commit(parts):
        w = state["w"]
        total = np.zeros(d)
        for part in parts:
            total += part
        grad = total / data.total_count + spec.lam * reg_subgradient(spec.reg, w)
        with np.errstate(over="ignore", invalid="ignore"):
            state["w"] = w - (hp.eta0 / np.sqrt(state["t"])) * grad
        state["t"] += 1
        return state["w"], None

    res = run_bsp(runtime, state["w"], task, commit, make_snapshot(spec, data),
                  max_rounds=hp.outer_rounds)
    return SolverResult(res.model, res.trace, res.elapsed_ms, diverged=res.diverged, rounds=res.rounds)


def pooled_gd_oracle(data: PartitionedDataset, spec: ObjectiveSpec, iters=100_000, eta0=0.1,
                     check_every=1000):
    """Reference optimum: full-batch GD on the pooled data, no distribution.

    Returns ``(w, objective)`` for the best iterate seen at the checkpoints.
    """
    blk = data.pooled
    w = np.zeros(data.dimension)
    g = np.zeros(data.dimension)
    best_w, best = w.copy(), full_objective(spec, w, data)
    t = 1
    while t <= iters:
        n = min(check_every, iters - t + 1)
        kernels.gd_steps(blk.data, blk.indices, blk.indptr, blk.labels, w, n, t, eta0,
                         spec.loss.code, spec.reg.code, spec.lam, g)
        t += n
        f = full_objective(spec, w, data)
        if f < best:
            best_w, best = w.copy(), f
    return best_w, best
