"""Consensus ADMM, asynchronous (ASIP) and bulk-synchronous.

Local sub-problems use the partition's *mean* loss, weighted by
``|D_i| p / n`` so that the weighted local losses sum to ``p`` times the
global average loss.  The consensus step then uses ``p * lam`` as its
regularization weight; with that scaling the ADMM fixed point minimizes the
true objective ``mean loss + lam R``.
"""

from __future__ import annotations

import numpy as np

from asiplab import kernels
from asiplab.core import CsrBlock, PartitionedDataset
from asiplab.objective import ConsensusParams, ObjectiveSpec, consensus_update
from asiplab.runtime import (
    POLL_UNITS,
    PUSH_UNITS,
    EnvelopeKind,
    RuntimeConfig,
    run_bsp,
    run_gang,
)
from asiplab.solvers.common import BatchStream, SolverHyperparams, SolverResult, make_snapshot
from asiplab.solvers.sgd import gang_result


def consensus_params(hp: SolverHyperparams, spec: ObjectiveSpec, p: int) -> ConsensusParams:
    return ConsensusParams(rho=hp.rho, p=p, lam=p * spec.lam, reg=spec.reg)


def local_weight(m, p, n):
    return m * p / n


class PrimalSolver:
    """Chunked mini-batch SGD on one partition's augmented sub-problem.

    The step counter keeps counting across solves, so ``t`` is the number of
    local gradient steps this worker has taken.  With ``cumulative_steps``
    off it restarts at 1 for every solve.
    """

    def __init__(self, blk: CsrBlock, spec: ObjectiveSpec, hp: SolverHyperparams, weight: float,
                 rng: np.random.Generator, cumulative_steps=True):
        self.blk = blk
        self.spec = spec
        self.hp = hp
        self.weight = weight
        self.stream = BatchStream(rng, blk.n_rows, hp.batch_size)
        self.cumulative = cumulative_steps
        self.t = 1
        self._g = np.zeros(blk.dimension)

    def chunks(self, w, mu, z, max_iters=None, eps=None):
        """Solve in place on ``w``; yields ``(steps, finite)`` after every chunk."""
        hp, blk = self.hp, self.blk
        if not self.cumulative:
            self.t = 1
        max_iters = hp.max_primal_iters if max_iters is None else max_iters
        eps = hp.epsilon if eps is None else eps
        iters = 0
        while iters < max_iters:
            n = min(hp.primal_chunk, max_iters - iters)
            batches = self.stream.take(n)
            done, converged, finite = kernels.admm_primal_steps(
                blk.data, blk.indices, blk.indptr, blk.labels, w, mu, z, hp.rho, self.weight,
                batches, self.t, hp.eta0, self.spec.loss.code, eps, self._g)
            self.stream.give_back(n - done)
            iters += done
            self.t += done
            yield done, finite
            if converged or not finite:
                return

    def solve(self, w, mu, z):
        steps = 0
        for done, finite in self.chunks(w, mu, z):
            steps += done
            if not finite:
                return steps, False
        return steps, True


# primal steps run without the residual stop while a worker waits for news
IDLE_STEPS = 100


def asip_admm_worker(hp: SolverHyperparams, spec: ObjectiveSpec, cumulative_steps=True,
                     shares=True):
    """Worker body for ASIP-ADMM.

    Each round: solve the primal, push this worker's contribution to the
    averages when the push interval has elapsed, absorb peers' messages,
    recompute the consensus ``z`` and take the dual step.  The worker's
    output is ``z``.

    With ``shares`` (the default) a push carries the current share
    ``(w, mu) / p`` and every worker keeps the newest share per sender, so
    ``w_bar`` is the sum of the latest shares.  Without faults or lost
    messages this equals accumulating ``(w - w_old, mu - mu_old) / p``
    deltas, which is what ``shares=False`` does.  Deltas cannot recover from
    a restarted worker: peers keep its old total and add the new one on top,
    and the fresh instance never learns the peers' accumulated state.

    If a round neither pushed nor received anything, the averages have not
    changed, so the consensus and dual steps are skipped and the worker
    keeps refining its primal for ``IDLE_STEPS`` steps.  Repeating the dual
    step against an unchanged consensus only winds up ``mu``.
    """

    def body(ctx):
        d = ctx.dimension
        p = ctx.p
        w, mu, z = np.zeros(d), np.zeros(d), np.zeros(d)
        w_bar, mu_bar = np.zeros(d), np.zeros(d)
        w_old, mu_old = np.zeros(d), np.zeros(d)
        share_w, share_mu = np.zeros((p, d)), np.zeros((p, d))
        me = ctx.worker_id
        params = consensus_params(hp, spec, p)
        solver = PrimalSolver(ctx.partition, spec, hp, local_weight(ctx.partition_size, p, ctx.total_count),
                              ctx.rng, cumulative_steps)
        state = ctx.stats.state
        last_push = ctx.now()
        rounds = 0
        idle = False
        while hp.outer_rounds is None or rounds < hp.outer_rounds:
            good = (w.copy(), z.copy())
            solve = solver.chunks(w, mu, z, IDLE_STEPS, 0.0) if idle else solver.chunks(w, mu, z)
            for done, finite in solve:
                if not finite:
                    ctx.stats.steps += done
                    ctx.mark_diverged()
                    ctx.publish(good[1])
                    return good[1]
                yield done * hp.batch_size
                ctx.stats.steps += done
            units = POLL_UNITS
            fresh = False
            if ctx.now() - last_push >= hp.comm_rate_push_ms:
                if shares:
                    dw, dmu = w / p, mu / p
                else:
                    dw, dmu = (w - w_old) / p, (mu - mu_old) / p
                if ctx.push(EnvelopeKind.PRIMAL_DUAL_DELTA, dw, dmu):
                    if shares:
                        share_w[me], share_mu[me] = dw, dmu
                    else:
                        w_bar += dw
                        mu_bar += dmu
                    fresh = True
                w_old, mu_old = w.copy(), mu.copy()
                last_push = ctx.now()
                units += PUSH_UNITS
            for env in ctx.drain():
                if shares:
                    share_w[env.sender], share_mu[env.sender] = env.payload
                else:
                    w_bar += env.payload[0]
                    mu_bar += env.payload[1]
                fresh = True
            idle = not fresh
            if idle:
                yield units
                continue
            if shares:
                w_bar, mu_bar = share_w.sum(axis=0), share_mu.sum(axis=0)
            z = consensus_update(params, w_bar, mu_bar)
            mu = mu + hp.rho * (w - z)
            rounds += 1
            state.update(w=w.copy(), mu=mu.copy(), rounds=rounds)
            ctx.publish(z)
            yield units
        return z

    return body


def run_asip_admm(data: PartitionedDataset, spec: ObjectiveSpec, hp: SolverHyperparams,
                  runtime: RuntimeConfig, cumulative_steps=True, shares=True) -> SolverResult:
    res = run_gang(runtime, asip_admm_worker(hp, spec, cumulative_steps, shares), data,
                   make_snapshot(spec, data))
    out = gang_result(res)
    out.local_models = [s.state.get("w", np.zeros(data.dimension)) for s in res.stats]
    out.rounds = min(s.state.get("rounds", 0) for s in res.stats)
    return out


def bsp_admm(data: PartitionedDataset, spec: ObjectiveSpec, hp: SolverHyperparams,
             runtime: RuntimeConfig, cumulative_steps=True) -> SolverResult:
    """Synchronous consensus ADMM; returns the consensus ``z``."""
    d, p, n = data.dimension, data.p, data.total_count
    params = consensus_params(hp, spec, p)
    solvers = [
        PrimalSolver(blk, spec, hp, local_weight(blk.n_rows, p, n),
                     np.random.default_rng(runtime.worker_seed(i)), cumulative_steps)
        for i, blk in enumerate(data.blocks)
    ]
    ws = [np.zeros(d) for _ in range(p)]
    mus = [np.zeros(d) for _ in range(p)]
    state = {"z": np.zeros(d), "diverged": False}

    def task(i):
        mu = mus[i] + hp.rho * (ws[i] - state["z"])
        w = ws[i].copy()
        steps, finite = solvers[i].solve(w, mu, state["z"])
        return (w, mu, finite), steps * hp.batch_size

    def commit(results):
        for i, (w, mu, finite) in enumerate(results):
            ws[i], mus[i] = w, mu
            state["diverged"] |= not finite
        w_bar = np.mean(ws, axis=0)
        mu_bar = np.mean(mus, axis=0)
        state["z"] = consensus_update(params, w_bar, mu_bar)
        return state["z"], list(ws)

    res = run_bsp(runtime, state["z"], task, commit, make_snapshot(spec, data),
                  max_rounds=hp.outer_rounds)
    return SolverResult(res.model, res.trace, res.elapsed_ms, local_models=list(ws),
                        diverged=res.diverged or state["diverged"], rounds=res.rounds)
