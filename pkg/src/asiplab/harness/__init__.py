"""Experiment harness: configuration, runs, traces and the CLI."""

from asiplab.harness.config import ConfigError, ExperimentConfig, build_config, load_config_file
from asiplab.harness.experiment import (
    RatioReport,
    compare,
    load_dataset,
    run_experiment,
    run_perturbation_suite,
    write_trace_csv,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RatioReport",
    "build_config",
    "compare",
    "load_config_file",
    "load_dataset",
    "run_experiment",
    "run_perturbation_suite",
    "write_trace_csv",
]
