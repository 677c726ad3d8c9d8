"""Experiment configuration: one flat record, loadable from key=value files.

Every field has a kebab-case spelling (``time-budget-ms``) used both as a
CLI flag and as a config-file key.  Precedence is defaults, then the config
file, then CLI flags.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from typing import Optional

from asiplab.core import Placement
from asiplab.datagen import PointCloudSpec
from asiplab.objective import Loss, ObjectiveSpec, Reg
from asiplab.runtime import FaultSpec, RealClock, RuntimeConfig, StragglerSpec, VirtualClock
from asiplab.solvers import SOLVERS, SolverHyperparams, default_hyperparams

SEED_ENV = "ASIPLAB_SEED"

ALGORITHMS = tuple(SOLVERS)
LOSSES = tuple(l.value for l in Loss)
REGS = tuple(r.value for r in Reg)
PLACEMENTS = tuple(p.value for p in Placement)
CLOCKS = ("virtual", "real")

# hyperparameters left unset fall back to the per-algorithm defaults
_HP_FIELDS = ("eta0", "rho", "epsilon", "batch_size", "comm_rate_push_ms",
              "polls_every_k_steps", "max_primal_iters", "outer_rounds")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{flag_name(field)}: {message}")
        self.field = field


def flag_name(field):
    return "lambda" if field == "lam" else field.replace("_", "-")


def default_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError("seed", f"{SEED_ENV}={raw!r} is not an integer") from None


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str = "asip-sgd"
    loss: str = "svm"
    reg: str = "l2"
    lam: float = 1e-2
    # data source: a sparse text file, or a generated point cloud
    data_path: Optional[str] = None
    n_per_class: int = 5000
    sigma: float = 1.0
    data_seed: int = 0
    placement: str = "uniform"
    # runtime
    p: int = 8
    time_budget_ms: float = 60000.0
    clock: str = "virtual"
    ms_per_unit: float = VirtualClock.ms_per_unit
    sample_ms: float = 100.0
    inbox_capacity: int = 1024
    seed: int = dataclasses.field(default_factory=default_seed)
    duplicate_push_suppression: bool = True
    per_worker_snapshots: bool = True
    # perturbations, used by ``run`` when set and by the perturbation suite
    straggler_worker: Optional[int] = None
    straggler_pause_ms: float = 1000.0
    straggler_period_ms: float = 2000.0
    fault_worker: Optional[int] = None
    fault_at_fraction: float = 0.3
    fault_zombie_ms: float = 0.0
    # hyperparameters; None means the algorithm's default
    eta0: Optional[float] = None
    rho: Optional[float] = None
    epsilon: Optional[float] = None
    batch_size: Optional[int] = None
    comm_rate_push_ms: Optional[float] = None
    polls_every_k_steps: Optional[int] = None
    max_primal_iters: Optional[int] = None
    outer_rounds: Optional[int] = None
    output: str = "trace.csv"

    def __post_init__(self):
        closed = {"algorithm": ALGORITHMS, "loss": LOSSES, "reg": REGS,
                  "placement": PLACEMENTS, "clock": CLOCKS}
        for name, allowed in closed.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(name, f"{getattr(self, name)!r} not one of {', '.join(allowed)}")
        positive = ("time_budget_ms", "ms_per_unit", "sample_ms", "straggler_pause_ms",
                    "straggler_period_ms")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be positive")
        if not self.lam >= 0:
            raise ConfigError("lam", "must be non-negative")
        if self.p < 1:
            raise ConfigError("p", "must be >= 1")
        if self.inbox_capacity < 1:
            raise ConfigError("inbox_capacity", "must be >= 1")
        if self.n_per_class < 1:
            raise ConfigError("n_per_class", "must be >= 1")
        if not self.sigma >= 0:
            raise ConfigError("sigma", "must be non-negative")
        if not 0 <= self.fault_at_fraction <= 1:
            raise ConfigError("fault_at_fraction", "must be within [0, 1]")
        if self.fault_zombie_ms < 0:
            raise ConfigError("fault_zombie_ms", "must be non-negative")
        if self.straggler_pause_ms >= self.straggler_period_ms:
            raise ConfigError("straggler_pause_ms", "must be shorter than straggler-period-ms")
        for name in ("straggler_worker", "fault_worker"):
            v = getattr(self, name)
            if v is not None and not 0 <= v < self.p:
                raise ConfigError(name, f"worker {v} outside 0..{self.p - 1}")
        try:
            self.hyperparams()
        except ValueError as exc:
            raise ConfigError(_guess_field(str(exc)), str(exc)) from None

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def objective(self) -> ObjectiveSpec:
        return ObjectiveSpec(self.loss, self.reg, self.lam)

    def hyperparams(self) -> SolverHyperparams:
        overrides = {k: getattr(self, k) for k in _HP_FIELDS if getattr(self, k) is not None}
        return default_hyperparams(self.algorithm).replace(**overrides)

    def point_cloud(self) -> PointCloudSpec:
        return PointCloudSpec(self.n_per_class, self.sigma, self.data_seed)

    def straggler(self) -> StragglerSpec:
        worker = 0 if self.straggler_worker is None else self.straggler_worker
        return StragglerSpec(worker, self.straggler_pause_ms, self.straggler_period_ms)

    def fault(self) -> FaultSpec:
        worker = 0 if self.fault_worker is None else self.fault_worker
        return FaultSpec(worker, self.fault_at_fraction * self.time_budget_ms, self.fault_zombie_ms)

    def runtime(self, straggler: Optional[StragglerSpec] = None,
                fault: Optional[FaultSpec] = None) -> RuntimeConfig:
        """Runtime for this config.

        Perturbations come from the arguments; with neither given, the
        config's own ``straggler_worker`` and ``fault_worker`` settings apply.
        """
        if straggler is None and fault is None:
            straggler = self.straggler() if self.straggler_worker is not None else None
            fault = self.fault() if self.fault_worker is not None else None
        if self.clock == "virtual":
            clock = VirtualClock(self.ms_per_unit, self.sample_ms)
        else:
            clock = RealClock(self.sample_ms)
        return RuntimeConfig(
            p=self.p, time_budget_ms=self.time_budget_ms, clock=clock,
            inbox_capacity=self.inbox_capacity, straggler=straggler, fault=fault,
            seed=self.seed, duplicate_push_suppression=self.duplicate_push_suppression,
            per_worker_snapshots=self.per_worker_snapshots)


def _guess_field(message):
    for f in _HP_FIELDS:
        if message.startswith(f):
            return f
    return "config"


# field name -> (base type name, accepts None)
FIELD_TYPES = {}
for _f in fields(ExperimentConfig):
    _t = str(_f.type)
    FIELD_TYPES[_f.name] = (_t.replace("Optional[", "").rstrip("]"), _t.startswith("Optional"))

ALIASES = {"lambda": "lam"}


def _parse_bool(raw):
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def canonical(name):
    name = name.strip().replace("-", "_")
    return ALIASES.get(name, name)


def coerce(name, raw):
    """Convert a string value for field ``name`` to its declared type."""
    if name not in FIELD_TYPES:
        raise ConfigError(name, "unknown setting")
    if not isinstance(raw, str):
        return raw
    kind, optional = FIELD_TYPES[name]
    raw = raw.strip()
    if optional and raw.lower() in ("", "none"):
        return None
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            return _parse_bool(raw)
    except ValueError as exc:
        raise ConfigError(name, str(exc)) from None
    return raw


def parse_config_text(text, source="<config>") -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError("config", f"{source}:{lineno}: expected key = value")
        name = canonical(key)
        values[name] = coerce(name, val.strip())
    return values


def load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def build_config(file_values=None, cli_values=None) -> ExperimentConfig:
    """Merge defaults, file values and CLI values (CLI wins) and validate."""
    merged = {}
    for source in (file_values or {}, cli_values or {}):
        for k, v in source.items():
            if v is not None:
                k = canonical(k)
                merged[k] = coerce(k, v)
    return ExperimentConfig(**merged)
