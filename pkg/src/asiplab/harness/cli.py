"""Command line entry point.

    asiplab gen-pointcloud --n-per-class 5000 --output cloud.txt
    asiplab run --algorithm asip-sgd --time-budget-ms 10000 --output trace.csv
    asiplab perturb --algorithm bsp-gd --mode straggler
    asiplab compare --algorithms bsp-gd,asip-sgd --output-dir traces/

Exit status is 0 on success, 1 for usage errors and 2 for runtime errors
(including a diverged model).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields

from asiplab.core import NumericError
from asiplab.datagen import PointCloudSpec, generate_point_cloud, write_sparse_text
from asiplab.harness.config import (
    ALGORITHMS,
    SEED_ENV,
    ConfigError,
    ExperimentConfig,
    build_config,
    flag_name,
    load_config_file,
)
from asiplab.harness.experiment import PERTURBATION_MODES, compare, run_experiment, run_perturbation_suite
from asiplab.runtime import GangError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_config_flags(ap, skip=()):
    group = ap.add_argument_group("experiment settings (also valid as config-file keys)")
    group.add_argument("--config", metavar="FILE", help="flat key = value file; flags override it")
    for f in fields(ExperimentConfig):
        if f.name in skip:
            continue
        names = ["--" + flag_name(f.name)]
        if f.name == "lam":
            names.append("--lambda")
        group.add_argument(*names, dest=f.name, metavar="V", default=None)


def build_parser():
    ap = _Parser(prog="asiplab", description="Asynchronous and bulk-synchronous convex solvers.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-pointcloud", help="write the two-cloud dataset in sparse text format")
    g.add_argument("--n-per-class", type=int, default=5000)
    g.add_argument("--sigma", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--output", required=True)

    r = sub.add_parser("run", help="run one solver and write its objective trace as CSV",
                       epilog=f"The default seed can be set through ${SEED_ENV}.")
    _add_config_flags(r)

    p = sub.add_parser("perturb", help="baseline vs straggler/fault run, objective ratios")
    p.add_argument("--mode", choices=PERTURBATION_MODES, required=True)
    p.add_argument("--no-perturbation", action="store_true",
                   help="skip the perturbation (ratios are then exactly 1)")
    _add_config_flags(p, skip=("output",))

    c = sub.add_parser("compare", help="run several solvers on the same data")
    c.add_argument("--algorithms", default=",".join(ALGORITHMS),
                   help="comma-separated list (default: all)")
    c.add_argument("--output-dir", help="write one trace CSV per algorithm here")
    _add_config_flags(c, skip=("output", "algorithm"))
    return ap


def _config_from(args):
    file_values = load_config_file(args.config) if args.config else {}
    cli = {f.name: getattr(args, f.name, None) for f in fields(ExperimentConfig)}
    return build_config(file_values, cli)


def _cmd_gen(args):
    try:
        spec = PointCloudSpec(args.n_per_class, args.sigma, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_sparse_text(args.output, generate_point_cloud(spec))
    print(f"wrote {2 * spec.n_per_class} records to {args.output}")
    return EXIT_OK


def _cmd_run(args):
    cfg = _config_from(args)
    out = run_experiment(cfg)
    print(f"algorithm: {cfg.algorithm}")
    print(f"final objective: {out.final_objective!r}")
    print(f"wall time: {out.wall_s:.3f} s")
    print(f"trace: {cfg.output}")
    if out.diverged:
        print("error: model diverged", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_perturb(args):
    cfg = _config_from(args)
    rep = run_perturbation_suite(cfg, args.mode, enabled=not args.no_perturbation)
    print(f"# {rep.mode} on {rep.algorithm}")
    print("checkpoint_ms,baseline,perturbed,ratio")
    for t, b, q, ratio in rep.rows():
        print(f"{t!r},{b!r},{q!r},{ratio!r}")
    return EXIT_OK


def _cmd_compare(args):
    algs = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    bad = [a for a in algs if a not in ALGORITHMS]
    if bad or not algs:
        raise ConfigError("algorithms", f"unknown {bad} ; choose from {', '.join(ALGORITHMS)}")
    cfg = _config_from(args)
    results = compare(cfg, algs, args.output_dir)
    print("algorithm,final_objective,wall_s,diverged")
    for alg, out in zip(algs, results):
        print(f"{alg},{out.final_objective!r},{out.wall_s:.3f},{str(out.diverged).lower()}")
    return EXIT_RUNTIME if any(o.diverged for o in results) else EXIT_OK


COMMANDS = {"gen-pointcloud": _cmd_gen, "run": _cmd_run, "perturb": _cmd_perturb,
            "compare": _cmd_compare}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, GangError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
