"""Running configured experiments and writing their traces."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from asiplab import kernels
from asiplab.core import PartitionedDataset, Placement, partition
from asiplab.datagen import generate_point_cloud, load_sparse_text
from asiplab.harness.config import ConfigError, ExperimentConfig
from asiplab.runtime import TraceEvent
from asiplab.solvers import SOLVERS, SolverResult

CSV_HEADER = ("elapsed_ms", "objective", "snapshot")
PERTURBATION_MODES = ("straggler", "fault")


def load_dataset(config: ExperimentConfig) -> PartitionedDataset:
    if config.data_path is not None:
        records, dim = load_sparse_text(config.data_path)
    else:
        records, dim = generate_point_cloud(config.point_cloud()), 3
    try:
        return partition(records, config.p, Placement(config.placement), seed=config.seed,
                         dimension=dim)
    except ValueError as exc:
        raise ConfigError("placement" if "label" in str(exc) else "p", str(exc)) from None


def trace_rows(trace: list[TraceEvent]):
    """CSV rows with ``elapsed_ms`` strictly increasing within each snapshot stream.

    Times are rounded to the nanosecond; when a stream has several samples
    at the same time only the last one is kept.
    """
    rows = []
    last = {}
    for ev in trace:
        t = round(ev.elapsed_ms, 6)
        j = last.get(ev.snapshot)
        if j is not None and t <= rows[j][0]:
            if t == rows[j][0]:
                rows[j] = (t, ev.objective, ev.snapshot)
            continue
        last[ev.snapshot] = len(rows)
        rows.append((t, ev.objective, ev.snapshot))
    return [(repr(t), repr(f), name) for t, f, name in rows]


def write_trace_csv(trace: list[TraceEvent], dest) -> None:
    """Write ``trace`` to a path or an open text file."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            write_trace_csv(trace, fh)
        return
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(CSV_HEADER)
    w.writerows(trace_rows(trace))


def trace_csv_text(trace: list[TraceEvent]) -> str:
    buf = io.StringIO()
    write_trace_csv(trace, buf)
    return buf.getvalue()


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    result: SolverResult
    final_objective: float
    # solver wall time in seconds, data loading excluded
    wall_s: float

    @property
    def diverged(self):
        return self.result.diverged


def execute(config: ExperimentConfig, data: PartitionedDataset, runtime=None) -> ExperimentResult:
    """Run one solver on already-loaded data."""
    spec = config.objective()
    runtime = config.runtime() if runtime is None else runtime
    kernels.warmup()
    start = time.perf_counter()
    res = SOLVERS[config.algorithm](data, spec, config.hyperparams(), runtime)
    wall = time.perf_counter() - start
    return ExperimentResult(config, res, res.final_objective(spec, data), wall)


def run_experiment(config: ExperimentConfig, output=None, data=None) -> ExperimentResult:
    """Run ``config``, write its trace CSV to ``output`` (default ``config.output``)."""
    data = load_dataset(config) if data is None else data
    out = execute(config, data)
    write_trace_csv(out.result.trace, config.output if output is None else output)
    return out


@dataclass(frozen=True)
class RatioReport:
    mode: str
    algorithm: str
    checkpoints_ms: tuple
    baseline: tuple
    perturbed: tuple
    enabled: bool = True

    @property
    def ratios(self) -> tuple:
        return tuple(_ratio(p, b) for p, b in zip(self.perturbed, self.baseline))

    def rows(self):
        return [(t, b, p, r) for t, b, p, r in
                zip(self.checkpoints_ms, self.baseline, self.perturbed, self.ratios)]


def _ratio(perturbed, baseline):
    if perturbed == baseline:
        return 1.0
    if baseline <= 0:
        return float("inf")
    return perturbed / baseline


def run_perturbation_suite(config: ExperimentConfig, mode: str, enabled=True,
                           checkpoints=(0.5, 1.0), data=None) -> RatioReport:
    """Baseline vs perturbed run of ``config.algorithm`` on identical data and seeds.

    ``mode`` picks the straggler (pause/period from the config) or the fault
    (reset at ``fault_at_fraction`` of the budget).  Objectives are compared
    at each fraction of the budget in ``checkpoints``.  With ``enabled``
    false the perturbed run is the baseline run itself.
    """
    if mode not in PERTURBATION_MODES:
        raise ConfigError("mode", f"{mode!r} not one of {', '.join(PERTURBATION_MODES)}")
    base_cfg = config.replace(straggler_worker=None, fault_worker=None)
    data = load_dataset(base_cfg) if data is None else data
    spec = config.objective()
    times = tuple(c * config.time_budget_ms for c in checkpoints)

    baseline = execute(base_cfg, data)
    if enabled:
        if mode == "straggler":
            runtime = base_cfg.runtime(straggler=config.straggler())
        else:
            runtime = base_cfg.runtime(fault=config.fault())
        perturbed = execute(base_cfg, data, runtime)
    else:
        perturbed = baseline

    def at(res: SolverResult):
        return tuple(_checkpoint(res, t, spec, data) for t in times)

    return RatioReport(mode, config.algorithm, times, at(baseline.result), at(perturbed.result), enabled)


def _checkpoint(res: SolverResult, t, spec, data):
    if t >= res.elapsed_ms:
        return res.final_objective(spec, data)
    return res.objective_at(t)


def compare(config: ExperimentConfig, algorithms, output_dir: Optional[str] = None):
    """Run several algorithms on the same data; returns their ExperimentResults."""
    data = load_dataset(config)
    results = []
    for alg in algorithms:
        cfg = config.replace(algorithm=alg)
        out = execute(cfg, data)
        if output_dir is not None:
            Path(output_dir).mkdir(parents=True, exist_ok=True)
            write_trace_csv(out.result.trace, Path(output_dir) / f"{alg}.csv")
        results.append(out)
    return results
