"""ASIP dual averaging."""

from __future__ import annotations

import numpy as np

from asiplab import kernels
from asiplab.core import PartitionedDataset
from asiplab.objective import ObjectiveSpec
from asiplab.runtime import POLL_UNITS, PUSH_UNITS, EnvelopeKind, RuntimeConfig, run_gang
from asiplab.solvers.common import BatchStream, SolverHyperparams, SolverResult, make_snapshot
from asiplab.solvers.sgd import gang_result


def asip_dual_averaging_worker(hp: SolverHyperparams, spec: ObjectiveSpec):
    """Worker body for ASIP dual averaging.

    The dual is ``(sum of all workers' gradients) / p + current gradient``.
    Each worker keeps its own gradient sum in ``own`` and the sum of the
    deltas received from peers in ``others``; the growth of ``own`` since the
    last push is broadcast at most once per ``comm_rate_push_ms``.  With no
    peers the dual is simply the running gradient sum.
    """

    def body(ctx):
        blk = ctx.partition
        d = ctx.dimension
        w = np.zeros(d)
        own = np.zeros(d)
        pushed = np.zeros(d)
        others = np.zeros(d)
        g = np.zeros(d)
        k, b = hp.polls_every_k_steps, hp.batch_size
        stream = BatchStream(ctx.rng, blk.n_rows, b)
        t = 1
        last_push = ctx.now()
        units = 0
        while True:
            prev = w.copy()
            for env in ctx.drain():
                others += env.payload[0]
            units += POLL_UNITS
            batches = stream.take(k)
            done = kernels.dual_averaging_steps(
                blk.data, blk.indices, blk.indptr, blk.labels, w, own, others, ctx.p, batches, t,
                hp.eta0, spec.loss.code, spec.reg.code, spec.lam, g)
            t += done
            if done < k:
                ctx.stats.steps += done
                ctx.mark_diverged()
                ctx.publish(prev)
                return prev
            yield units + k * b
            units = 0
            ctx.stats.steps += done
            ctx.publish(w)
            if ctx.now() - last_push >= hp.comm_rate_push_ms:
                ctx.push(EnvelopeKind.DUAL_DELTA, own - pushed)
                pushed = own.copy()
                last_push = ctx.now()
                units += PUSH_UNITS

    return body


def run_asip_dual_averaging(data: PartitionedDataset, spec: ObjectiveSpec, hp: SolverHyperparams,
                            runtime: RuntimeConfig) -> SolverResult:
    res = run_gang(runtime, asip_dual_averaging_worker(hp, spec), data, make_snapshot(spec, data))
    return gang_result(res)
