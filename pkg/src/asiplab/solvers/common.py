from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from asiplab.core import PartitionedDataset
from asiplab.objective import ObjectiveSpec, safe_objective
from asiplab.runtime import TraceEvent, WorkerStats


@dataclass(frozen=True)
class SolverHyperparams:
    """Solver constants.  The defaults are the ASIP-SGD settings."""

    eta0: float = 0.1
    rho: float = 1e-2
    epsilon: float = 1e-5
    batch_size: int = 10
    comm_rate_push_ms: float = 10.0
    polls_every_k_steps: int = 10
    max_primal_iters: int = 10000
    outer_rounds: Optional[int] = None
    # SGD iterations between yields inside an ADMM primal solve
    primal_chunk: int = 500

    def __post_init__(self):
        for name in ("eta0", "rho", "epsilon", "comm_rate_push_ms"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive, got {v}")
        for name in ("batch_size", "polls_every_k_steps", "max_primal_iters", "primal_chunk"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.outer_rounds is not None and self.outer_rounds < 1:
            raise ValueError("outer_rounds must be >= 1")

    def replace(self, **changes):
        return replace(self, **changes)


# push-rate defaults differ between the asynchronous algorithms
_PUSH_RATE_MS = {"asip-sgd": 10.0, "asip-dualavg": 10.0, "asip-admm": 100.0}


def default_hyperparams(algorithm: str) -> SolverHyperparams:
    return SolverHyperparams(comm_rate_push_ms=_PUSH_RATE_MS.get(algorithm, 10.0))


@dataclass
class SolverResult:
    model: np.ndarray
    trace: list[TraceEvent]
    elapsed_ms: float
    local_models: list[np.ndarray] = field(default_factory=list)
    stats: list[WorkerStats] = field(default_factory=list)
    diverged: bool = False
    rounds: Optional[int] = None

    def final_objective(self, spec, data):
        return safe_objective(spec, self.model, data)

    def max_consensus_gap(self):
        """``max_i ||w_i - z||`` against the returned model."""
        if not self.local_models:
            return 0.0
        return max(float(np.linalg.norm(w - self.model)) for w in self.local_models)

    def objective_at(self, t, snapshot="avg"):
        """Objective of the latest ``snapshot`` sample taken at or before ``t``."""
        best = None
        for ev in self.trace:
            if ev.snapshot == snapshot and ev.elapsed_ms <= t:
                best = ev.objective
        if best is None:
            raise ValueError(f"no {snapshot} sample at or before {t} ms")
        return best


def make_snapshot(spec: ObjectiveSpec, data: PartitionedDataset):
    return lambda w: safe_objective(spec, w, data)


def sample_batches(rng: np.random.Generator, m: int, steps: int, batch: int) -> np.ndarray:
    """``steps`` mini-batches of row indices drawn uniformly with replacement."""
    return rng.integers(0, m, size=(steps, batch), dtype=np.int64)


class BatchStream:
    """Mini-batches drawn from ``rng`` in large blocks and handed out in order.

    The sequence of batches is the same as drawing them one at a time, so
    callers may consume batches in any chunking without changing the run.
    """

    def __init__(self, rng: np.random.Generator, m: int, batch: int, block: int = 4096):
        self.rng, self.m, self.batch, self.block = rng, m, batch, block
        self._buf = np.empty((0, batch), dtype=np.int64)
        self._pos = 0

    def take(self, steps: int) -> np.ndarray:
        """The next ``steps`` batches; entries not consumed via ``give_back`` are used up."""
        if self._pos + steps > len(self._buf):
            rest = self._buf[self._pos:]
            fresh = sample_batches(self.rng, self.m, max(self.block, steps - len(rest)), self.batch)
            self._buf = np.concatenate([rest, fresh]) if len(rest) else fresh
            self._pos = 0
        out = self._buf[self._pos:self._pos + steps]
        self._pos += steps
        return out

    def give_back(self, steps: int):
        """Return the last ``steps`` batches from ``take`` unused; they come out next."""
        self._pos -= steps
