"""ASIP-SGD and the naive averaging baseline."""

from __future__ import annotations

import numpy as np

from asiplab import kernels
from asiplab.core import PartitionedDataset
from asiplab.objective import ObjectiveSpec
from asiplab.runtime import (
    POLL_UNITS,
    PUSH_UNITS,
    EnvelopeKind,
    RuntimeConfig,
    WorkerContext,
    run_gang,
)
from asiplab.solvers.common import BatchStream, SolverHyperparams, SolverResult, make_snapshot


def asip_sgd_worker(hp: SolverHyperparams, spec: ObjectiveSpec, communicate=True):
    """Worker body for ASIP-SGD.

    The worker polls every ``polls_every_k_steps`` steps and applies each
    received gradient with its own current step size.  Gradients computed
    since the last push are summed and pushed at most once per
    ``comm_rate_push_ms``.  With ``communicate=False`` it is a plain local
    mini-batch SGD solver.
    """

    def body(ctx: WorkerContext):
        blk = ctx.partition
        d = ctx.dimension
        w = np.zeros(d)
        acc = np.zeros(d)
        g = np.zeros(d)
        k, b = hp.polls_every_k_steps, hp.batch_size
        stream = BatchStream(ctx.rng, blk.n_rows, b)
        t = 1
        last_push = ctx.now()
        units = 0
        while True:
            prev = w.copy()
            if communicate:
                for env in ctx.drain():
                    w -= (hp.eta0 / np.sqrt(t)) * env.payload[0]
                units += POLL_UNITS
            batches = stream.take(k)
            done = kernels.sgd_steps(blk.data, blk.indices, blk.indptr, blk.labels, w, batches, t,
                                     hp.eta0, spec.loss.code, spec.reg.code, spec.lam, acc, g)
            t += done
            if done < k or not np.all(np.isfinite(w)):
                ctx.stats.steps += done
                ctx.mark_diverged()
                ctx.publish(prev)
                return prev
            yield units + k * b
            units = 0
            # steps count once their work has finished and the model is visible
            ctx.stats.steps += done
            ctx.publish(w)
            if communicate and ctx.now() - last_push >= hp.comm_rate_push_ms:
                ctx.push(EnvelopeKind.GRADIENT_DELTA, acc)
                acc[:] = 0.0
                last_push = ctx.now()
                units += PUSH_UNITS

    return body


def gang_result(res, model=None):
    return SolverResult(res.average if model is None else model, res.trace, res.elapsed_ms,
                        local_models=res.models, stats=res.stats, diverged=bool(res.diverged))


def run_asip_sgd(data: PartitionedDataset, spec: ObjectiveSpec, hp: SolverHyperparams,
                 runtime: RuntimeConfig) -> SolverResult:
    res = run_gang(runtime, asip_sgd_worker(hp, spec), data, make_snapshot(spec, data))
    return gang_result(res)


def avg_solver(data: PartitionedDataset, spec: ObjectiveSpec, hp: SolverHyperparams,
               runtime: RuntimeConfig) -> SolverResult:
    """Independent local SGD per partition; the models are averaged once at the end."""
    res = run_gang(runtime, asip_sgd_worker(hp, spec, communicate=False), data,
                   make_snapshot(spec, data))
    return gang_result(res)
