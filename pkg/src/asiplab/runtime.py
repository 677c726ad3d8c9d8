"""Gang-scheduled execution of ASIP workers.

A worker body is a generator function taking a :class:`WorkerContext`.  It
yields a positive number of *work units* every time it finishes a piece of
computation (one unit is one record's gradient evaluation; a push or poll
costs one unit).  Under :class:`VirtualClock` the gang is simulated by a
single-threaded discrete-event scheduler that always resumes the worker
whose work finishes earliest, so runs are bit-for-bit reproducible.  Under
:class:`RealClock` every worker runs in its own thread and yields only
serve as points for budget checks and straggler pauses.

Workers exchange :class:`AsipEnvelope` messages through a :class:`Bus`:
uniform best-effort broadcast into bounded per-worker inboxes that drop the
oldest envelope on overflow.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import logging
import math
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Generator, Optional, Sequence

import numpy as np

from asiplab.core import CsrBlock, PartitionedDataset

log = logging.getLogger(__name__)

PUSH_UNITS = 1
POLL_UNITS = 1


class GangError(RuntimeError):
    """A worker raised; ``worker_id`` names it."""

    def __init__(self, worker_id, message):
        super().__init__(f"worker {worker_id}: {message}")
        self.worker_id = worker_id


class EnvelopeKind(enum.Enum):
    GRADIENT_DELTA = "gradient"
    PRIMAL_DUAL_DELTA = "primal_dual"
    DUAL_DELTA = "dual"
    FINAL_MODEL = "final"


_PAYLOAD_ARITY = {
    EnvelopeKind.GRADIENT_DELTA: 1,
    EnvelopeKind.PRIMAL_DUAL_DELTA: 2,
    EnvelopeKind.DUAL_DELTA: 1,
    EnvelopeKind.FINAL_MODEL: 1,
}


@dataclass(frozen=True, eq=False)
class AsipEnvelope:
    """Immutable message; payload arrays are copied and frozen on construction."""

    sender: int
    kind: EnvelopeKind
    payload: tuple

    def __post_init__(self):
        kind = EnvelopeKind(self.kind)
        payload = tuple(self.payload)
        if len(payload) != _PAYLOAD_ARITY[kind]:
            raise ValueError(f"{kind.name} carries {_PAYLOAD_ARITY[kind]} vectors, got {len(payload)}")
        frozen = []
        for v in payload:
            a = np.array(v, dtype=np.float64)
            a.flags.writeable = False
            frozen.append(a)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "payload", tuple(frozen))

    @property
    def dimension(self):
        return len(self.payload[0])


@dataclass
class BusCounters:
    pushed: int = 0
    enqueued: int = 0
    dropped: int = 0
    suppressed: int = 0
    polled: int = 0


class Bus:
    """Uniform broadcast between attached worker instances.

    Each attached instance owns one bounded inbox.  An envelope pushed by
    worker ``i`` is appended to the inbox of every live instance belonging to
    a different worker.  With duplicate-push suppression, only the most
    recently attached instance of a worker may push.
    """

    def __init__(self, dimension, capacity=1024, suppress_duplicates=True, clock=None):
        if capacity < 1:
            raise ValueError("inbox capacity must be >= 1")
        self.dimension = dimension
        self.capacity = capacity
        self.suppress_duplicates = suppress_duplicates
        self.counters = BusCounters()
        # Simulated time source; when set, an envelope becomes visible only
        # strictly after the instant it was sent.
        self.clock = clock
        self._inboxes: dict[int, tuple[int, deque]] = {}
        self._owner: dict[int, int] = {}
        self._keys = itertools.count()
        self._lock = threading.Lock()

    def attach(self, worker_id) -> "AsipChannel":
        with self._lock:
            key = next(self._keys)
            self._inboxes[key] = (worker_id, deque(maxlen=self.capacity))
            self._owner[worker_id] = key
        return AsipChannel(self, worker_id, key)

    def detach(self, channel: "AsipChannel"):
        with self._lock:
            self._inboxes.pop(channel.key, None)

    def pending(self, channel: "AsipChannel") -> int:
        entry = self._inboxes.get(channel.key)
        return len(entry[1]) if entry else 0

    def _push(self, channel, env):
        if env.sender != channel.worker_id:
            raise ValueError(f"envelope sender {env.sender} pushed on channel of worker {channel.worker_id}")
        if env.dimension != self.dimension:
            raise ValueError(f"envelope dimension {env.dimension} != run dimension {self.dimension}")
        with self._lock:
            if self.suppress_duplicates and self._owner.get(channel.worker_id) != channel.key:
                self.counters.suppressed += 1
                return False
            self.counters.pushed += 1
            sent_at = self.clock() if self.clock is not None else None
            for worker, inbox in self._inboxes.values():
                if worker == channel.worker_id:
                    continue
                if len(inbox) == inbox.maxlen:
                    self.counters.dropped += 1
                inbox.append((sent_at, env))
                self.counters.enqueued += 1
            return True

    def _poll(self, channel):
        with self._lock:
            entry = self._inboxes.get(channel.key)
            if not entry or not entry[1]:
                return None
            inbox = entry[1]
            if self.clock is not None and not inbox[0][0] < self.clock():
                return None
            self.counters.polled += 1
            return inbox.popleft()[1]


@dataclass(frozen=True, eq=False)
class AsipChannel:
    """One worker instance's view of the bus."""

    bus: Bus
    worker_id: int
    key: int

    def push(self, env: AsipEnvelope) -> bool:
        """Best-effort broadcast; never blocks.  False when suppressed."""
        return self.bus._push(self, env)

    def poll(self) -> Optional[AsipEnvelope]:
        """Oldest queued envelope or ``None``; never blocks."""
        return self.bus._poll(self)

    def drain(self):
        while (env := self.poll()) is not None:
            yield env


@dataclass(frozen=True)
class RealClock:
    sample_ms: float = 100.0


@dataclass(frozen=True)
class VirtualClock:
    """Simulated time: each work unit advances the worker by ``ms_per_unit``.

    One unit is the gradient of one record; the default prices it at 5 us.
    """

    ms_per_unit: float = 0.005
    sample_ms: float = 100.0

    def __post_init__(self):
        if self.ms_per_unit <= 0 or self.sample_ms <= 0:
            raise ValueError("virtual clock rates must be positive")


@dataclass(frozen=True)
class StragglerSpec:
    """Worker ``worker`` pauses for the last ``pause_ms`` of every ``period_ms``."""

    worker: int
    pause_ms: float = 1000.0
    period_ms: float = 2000.0

    def __post_init__(self):
        if not 0 < self.pause_ms < self.period_ms:
            raise ValueError("straggler pause must satisfy 0 < pause < period")

    @property
    def duty_cycle(self):
        return self.pause_ms / self.period_ms

    def _active_end(self, t):
        k = math.floor(t / self.period_ms)
        return k * self.period_ms + (self.period_ms - self.pause_ms)

    def resume_time(self, t):
        """``t`` itself when active, else the end of the pause containing ``t``."""
        k = math.floor(t / self.period_ms)
        if t >= k * self.period_ms + (self.period_ms - self.pause_ms):
            return (k + 1) * self.period_ms
        return t

    def advance(self, start, work_ms):
        """Time at which ``work_ms`` of computation started at ``start`` finishes."""
        t = self.resume_time(start)
        remaining = work_ms
        while True:
            avail = self._active_end(t) - t
            if remaining <= avail:
                return t + remaining
            remaining -= avail
            t = self.resume_time(self._active_end(t))


@dataclass(frozen=True)
class FaultSpec:
    """Reset ``worker`` at ``at_ms``.

    With ``zombie_ms > 0`` the original instance keeps running for that long
    after the replacement starts, modelling a duplicate launched for a
    straggler.
    """

    worker: int
    at_ms: float
    zombie_ms: float = 0.0


@dataclass(frozen=True)
class RuntimeConfig:
    p: int
    time_budget_ms: float
    clock: RealClock | VirtualClock = VirtualClock()
    inbox_capacity: int = 1024
    straggler: Optional[StragglerSpec] = None
    fault: Optional[FaultSpec] = None
    seed: int = 0
    duplicate_push_suppression: bool = True
    per_worker_snapshots: bool = True

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if not self.time_budget_ms > 0:
            raise ValueError("time_budget_ms must be positive")
        if self.inbox_capacity < 1:
            raise ValueError("inbox_capacity must be >= 1")
        for name, spec in (("straggler", self.straggler), ("fault", self.fault)):
            if spec is not None and not 0 <= spec.worker < self.p:
                raise ValueError(f"{name} worker {spec.worker} outside 0..{self.p - 1}")

    @property
    def virtual(self):
        return isinstance(self.clock, VirtualClock)

    def worker_seed(self, worker_id):
        return self.seed ^ worker_id


@dataclass(frozen=True)
class TraceEvent:
    elapsed_ms: float
    objective: float
    snapshot: str


@dataclass
class WorkerStats:
    steps: int = 0
    pushes: int = 0
    received: int = 0
    units: float = 0.0
    restarts: int = 0
    diverged: bool = False
    state: dict = field(default_factory=dict)


class WorkerContext:
    """Everything a worker body may touch."""

    def __init__(self, gang, worker_id, partition: CsrBlock, channel: AsipChannel):
        self._gang = gang
        self.worker_id = worker_id
        self.p = gang.config.p
        self.partition_size = gang.partition_sizes[worker_id]
        self.total_count = gang.total_count
        self.partition = partition
        self.channel = channel
        self.dimension = gang.dimension
        self.rng = np.random.default_rng(gang.config.worker_seed(worker_id))
        self.stats = gang.stats[worker_id]

    def now(self) -> float:
        return self._gang.now()

    def expired(self) -> bool:
        return self.now() >= self._gang.config.time_budget_ms

    def push(self, kind, *payload) -> bool:
        sent = self.channel.push(AsipEnvelope(self.worker_id, kind, payload))
        if sent:
            self.stats.pushes += 1
        return sent

    def drain(self):
        for env in self.channel.drain():
            self.stats.received += 1
            yield env

    def publish(self, model):
        """Expose the worker's current output model to the monitor."""
        if self._gang.is_current(self):
            self._gang.published[self.worker_id] = np.array(model, dtype=np.float64)

    def mark_diverged(self):
        self.stats.diverged = True
        log.warning("worker %d diverged", self.worker_id)


WorkerBody = Callable[[WorkerContext], Generator[float, None, np.ndarray]]
Snapshot = Callable[[np.ndarray], float]


@dataclass
class GangResult:
    models: list[np.ndarray]
    trace: list[TraceEvent]
    stats: list[WorkerStats]
    counters: BusCounters
    elapsed_ms: float

    @property
    def average(self):
        return np.mean(self.models, axis=0)

    @property
    def diverged(self):
        return [i for i, s in enumerate(self.stats) if s.diverged]


@dataclass(eq=False)
class _Instance:
    worker_id: int
    ctx: WorkerContext
    gen: Generator
    started: bool = False
    alive: bool = True
    dies_at: float = math.inf


class _Gang:
    def __init__(self, config: RuntimeConfig, body: WorkerBody, data: PartitionedDataset,
                 snapshot: Snapshot):
        if config.p != data.p:
            raise ValueError(f"config.p={config.p} but dataset has {data.p} partitions")
        self.config = config
        self.body = body
        self.data = data
        self.snapshot = snapshot
        self.dimension = data.dimension
        self.total_count = data.total_count
        self.partition_sizes = [len(part) for part in data.partitions]
        self.bus = Bus(data.dimension, config.inbox_capacity, config.duplicate_push_suppression,
                       clock=self.now if config.virtual else None)
        self.stats = [WorkerStats() for _ in range(config.p)]
        self.published = [np.zeros(data.dimension) for _ in range(config.p)]
        self.current: list[Optional[_Instance]] = [None] * config.p
        self.trace: list[TraceEvent] = []
        self._now = 0.0

    def now(self):
        return self._now

    def is_current(self, ctx):
        inst = self.current[ctx.worker_id]
        return inst is not None and inst.ctx is ctx

    def spawn(self, worker_id) -> _Instance:
        channel = self.bus.attach(worker_id)
        ctx = WorkerContext(self, worker_id, self.data.blocks[worker_id], channel)
        inst = _Instance(worker_id, ctx, self.body(ctx))
        self.current[worker_id] = inst
        self.published[worker_id] = np.zeros(self.dimension)
        return inst

    def kill(self, inst: _Instance):
        if inst.alive:
            inst.alive = False
            self.bus.detach(inst.ctx.channel)

    def step(self, inst: _Instance):
        """Resume ``inst`` once.  Returns work units, or None when it finished."""
        try:
            units = inst.gen.send(None) if inst.started else next(inst.gen)
            inst.started = True
        except StopIteration as stop:
            inst.started = True
            if stop.value is not None and self.current[inst.worker_id] is inst:
                self.published[inst.worker_id] = np.array(stop.value, dtype=np.float64)
            self.kill(inst)
            return None
        except Exception as exc:
            raise GangError(inst.worker_id, f"{type(exc).__name__}: {exc}") from exc
        if not units > 0:
            raise GangError(inst.worker_id, f"yielded non-positive work {units!r}")
        inst.ctx.stats.units += units
        return units

    def record(self, t):
        models = [m.copy() for m in self.published]
        self.trace.append(TraceEvent(t, self.snapshot(np.mean(models, axis=0)), "avg"))
        if self.config.per_worker_snapshots and self.config.p > 1:
            for i, m in enumerate(models):
                self.trace.append(TraceEvent(t, self.snapshot(m), f"w{i}"))

    def restart(self, old: _Instance):
        fault = self.config.fault
        if fault.zombie_ms > 0:
            old.dies_at = self._now + fault.zombie_ms
        else:
            self.kill(old)
            old.gen.close()
        self.stats[old.worker_id].restarts += 1
        return self.spawn(old.worker_id)

    def result(self, elapsed):
        return GangResult([m.copy() for m in self.published], self.trace, self.stats,
                          self.bus.counters, elapsed)


_FAULT, _WAKE = 0, 1


def _run_virtual(gang: _Gang) -> GangResult:
    cfg = gang.config
    clock: VirtualClock = cfg.clock
    budget = cfg.time_budget_ms
    seq = itertools.count()
    heap = []
    for w in range(cfg.p):
        heapq.heappush(heap, (0.0, _WAKE, w, next(seq), gang.spawn(w)))
    if cfg.fault is not None:
        heapq.heappush(heap, (float(cfg.fault.at_ms), _FAULT, cfg.fault.worker, next(seq), None))

    sample_k = 0
    end = 0.0
    while heap:
        t, kind, w, _, inst = heapq.heappop(heap)
        if t > budget:
            break
        while sample_k * clock.sample_ms < t:
            gang.record(sample_k * clock.sample_ms)
            sample_k += 1
        gang._now = t
        if kind == _FAULT:
            if gang.current[w] is not None and gang.current[w].alive:
                heapq.heappush(heap, (t, _WAKE, w, next(seq), gang.restart(gang.current[w])))
            continue
        if not inst.alive:
            continue
        if t >= inst.dies_at:
            gang.kill(inst)
            inst.gen.close()
            continue
        end = t
        units = gang.step(inst)
        if units is None:
            continue
        work = units * clock.ms_per_unit
        straggler = cfg.straggler
        if straggler is not None and straggler.worker == w:
            wake = straggler.advance(t, work)
        else:
            wake = t + work
        heapq.heappush(heap, (wake, _WAKE, w, next(seq), inst))

    stop = budget if heap else end
    while sample_k * clock.sample_ms <= stop:
        gang.record(sample_k * clock.sample_ms)
        sample_k += 1
    if (sample_k - 1) * clock.sample_ms < stop:
        gang.record(stop)
    for _, _, _, _, inst in heap:
        if inst is not None and inst.alive:
            inst.gen.close()
    return gang.result(stop)


def _run_real(gang: _Gang) -> GangResult:
    cfg = gang.config
    budget = cfg.time_budget_ms
    start = time.perf_counter()
    gang.now = lambda: (time.perf_counter() - start) * 1000.0
    stop_event = threading.Event()
    errors: list[GangError] = []
    threads: list[threading.Thread] = []

    def drive(inst: _Instance):
        straggler = cfg.straggler if cfg.straggler and cfg.straggler.worker == inst.worker_id else None
        try:
            while inst.alive and not stop_event.is_set():
                now = gang.now()
                if now >= budget or now >= inst.dies_at:
                    break
                if straggler is not None:
                    resume = straggler.resume_time(now)
                    if resume > now and stop_event.wait((min(resume, budget) - now) / 1000.0):
                        break
                if gang.step(inst) is None:
                    return
        except GangError as exc:
            errors.append(exc)
            stop_event.set()
        finally:
            gang.kill(inst)
            inst.gen.close()

    def launch(inst):
        th = threading.Thread(target=drive, args=(inst,), daemon=True, name=f"asip-worker-{inst.worker_id}")
        threads.append(th)
        th.start()

    for w in range(cfg.p):
        launch(gang.spawn(w))

    fault_pending = cfg.fault is not None
    sample_k = 0
    while True:
        now = gang.now()
        if fault_pending and now >= cfg.fault.at_ms:
            fault_pending = False
            old = gang.current[cfg.fault.worker]
            if old is not None and old.alive:
                if cfg.fault.zombie_ms > 0:
                    old.dies_at = now + cfg.fault.zombie_ms
                else:
                    gang.kill(old)
                gang.stats[old.worker_id].restarts += 1
                launch(gang.spawn(old.worker_id))
        if sample_k * cfg.clock.sample_ms <= now:
            gang.record(sample_k * cfg.clock.sample_ms)
            sample_k += 1
        if errors or now >= budget or not any(th.is_alive() for th in threads):
            break
        targets = [sample_k * cfg.clock.sample_ms, budget]
        if fault_pending:
            targets.append(cfg.fault.at_ms)
        stop_event.wait(max(0.0, min(targets) - now) / 1000.0)
    stop_event.set()
    for th in threads:
        th.join()
    if errors:
        raise errors[0]
    elapsed = min(gang.now(), max(budget, 0.0))
    if not gang.trace or gang.trace[-1].elapsed_ms < elapsed:
        gang.record(elapsed)
    return gang.result(elapsed)


def run_gang(config: RuntimeConfig, worker_body: WorkerBody, data: PartitionedDataset,
             snapshot: Snapshot) -> GangResult:
    """Run ``config.p`` workers concurrently over ``data``'s partitions.

    Stops when the time budget elapses or every worker returns.  A worker's
    final model is its return value, or the last model it published if the
    budget cut it off.
    """
    gang = _Gang(config, worker_body, data, snapshot)
    if config.virtual:
        return _run_virtual(gang)
    return _run_real(gang)


@dataclass
class BspResult:
    model: np.ndarray
    trace: list[TraceEvent]
    rounds: int
    worker_units: list[float]
    elapsed_ms: float
    local_models: Optional[list[np.ndarray]] = None
    diverged: bool = False


RoundTask = Callable[[int], tuple[object, float]]
RoundCommit = Callable[[list], tuple[np.ndarray, Optional[Sequence[np.ndarray]]]]


def run_bsp(config: RuntimeConfig, initial: np.ndarray, task: RoundTask, commit: RoundCommit,
            snapshot: Snapshot, max_rounds: Optional[int] = None) -> BspResult:
    """Drive barrier-separated rounds.

    ``task(i)`` does partition ``i``'s work for the current round without
    committing it and returns ``(result, work_units)``.  After the barrier,
    ``commit(results)`` folds the results into the solver state and returns
    ``(model, local_models)``.  A round that would end after the budget is
    discarded.  Straggler pauses delay the straggler's part of the round; a
    fault makes the affected worker redo its part of the round, as with
    lineage-based recomputation (the solver state itself is unaffected).
    """
    budget = config.time_budget_ms
    model = np.array(initial, dtype=np.float64)
    local = None
    trace: list[TraceEvent] = []
    units_total = [0.0] * config.p
    fault_pending = config.fault is not None
    straggler = config.straggler

    def record(t, model, local):
        trace.append(TraceEvent(t, snapshot(model), "avg"))
        if config.per_worker_snapshots and local is not None and config.p > 1:
            for i, m in enumerate(local):
                trace.append(TraceEvent(t, snapshot(m), f"w{i}"))

    record(0.0, model, None)
    rounds = 0
    t = 0.0
    diverged = False
    sample_ms = config.clock.sample_ms
    next_sample = sample_ms
    # the latest unsampled round, recorded at the end so the trace ends on it
    pending = None

    def maybe_record(t, model, local):
        nonlocal next_sample, pending
        if t >= next_sample or not np.all(np.isfinite(model)):
            record(t, model, local)
            pending = None
            while next_sample <= t:
                next_sample += sample_ms
        else:
            pending = (t, model, local)

    if config.virtual:
        ms = config.clock.ms_per_unit

        def finish(i, start, units):
            if straggler is not None and straggler.worker == i:
                return straggler.advance(start, units * ms)
            return start + units * ms

        while max_rounds is None or rounds < max_rounds:
            results, ends = [], []
            for i in range(config.p):
                res, units = task(i)
                results.append(res)
                end_i = finish(i, t, units)
                if fault_pending and config.fault.worker == i and t <= config.fault.at_ms < end_i:
                    end_i = finish(i, config.fault.at_ms, units)
                    units *= 2
                ends.append(end_i)
                units_total[i] += units
            if fault_pending and config.fault.at_ms < max(ends):
                fault_pending = False
            round_end = max(ends)
            if round_end > budget:
                break
            model, local = commit(results)
            rounds += 1
            t = round_end
            maybe_record(t, model, local)
            if not np.all(np.isfinite(model)):
                diverged = True
                break
    else:
        start = time.perf_counter()

        def now():
            return (time.perf_counter() - start) * 1000.0

        def run_task(i):
            if straggler is not None and straggler.worker == i:
                _sleep_until(straggler.resume_time(now()), now)
            res, units = task(i)
            if straggler is not None and straggler.worker == i:
                _sleep_until(straggler.resume_time(now()), now)
            return res, units

        with ThreadPoolExecutor(max_workers=config.p) as pool:
            while (max_rounds is None or rounds < max_rounds) and now() < budget:
                round_start = now()
                outs = list(pool.map(run_task, range(config.p)))
                if fault_pending and round_start <= config.fault.at_ms <= now():
                    fault_pending = False
                    outs[config.fault.worker] = run_task(config.fault.worker)
                if now() > budget:
                    break
                for i, (_, units) in enumerate(outs):
                    units_total[i] += units
                model, local = commit([res for res, _ in outs])
                rounds += 1
                t = now()
                maybe_record(t, model, local)
                if not np.all(np.isfinite(model)):
                    diverged = True
                    break
        t = min(now(), budget)
    if pending is not None:
        record(*pending)
    if config.virtual and max_rounds is None and trace[-1].elapsed_ms < budget and not diverged:
        t = budget
    return BspResult(model, trace, rounds, units_total, t, local, diverged)


def _sleep_until(target, now):
    delay = target - now()
    if delay > 0:
        time.sleep(delay / 1000.0)
