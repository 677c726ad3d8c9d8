"""End-to-end acceptance checks.

Each check prints one ``PASS``/``FAIL`` line.  The convergence instance is
the 10 000-point two-cloud dataset on 8 workers with hinge loss and L2
regularization (lambda 0.01), run for 60 s of virtual time with the default
hyperparameters.  Solver runs are shared between checks through
module-scoped fixtures.
"""

import time

import numpy as np
import pytest

from asiplab.core import Placement, Record, partition
from asiplab.datagen import PointCloudSpec, generate_point_cloud
from asiplab.harness import ExperimentConfig, run_experiment, run_perturbation_suite
from asiplab.objective import (
    ConsensusParams,
    Loss,
    ObjectiveSpec,
    Reg,
    consensus_update,
    loss,
    loss_subgradient,
    reg_penalty,
    reg_subgradient,
)
from asiplab.runtime import RuntimeConfig, VirtualClock
from asiplab.solvers import SOLVERS, default_hyperparams, pooled_gd_oracle

from oracles import central_diff, numeric_consensus, rel_err, run_random_ops

SPEC = ObjectiveSpec("svm", "l2", 1e-2)
BUDGET_MS = 60_000.0
P = 8

# Skew margin, fixed from one reference run (seed 0) before the check was
# written: AVG 0.5703, BSP-ADMM 0.0888, ASIP-ADMM 0.0282, so AVG's
# objective was 6.42x the worse of the two ADMM objectives.
SKEW_MARGIN = 6.42
SLACK = 0.10


def report(capsys, number, name, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance {number}] {'PASS' if ok else 'FAIL'} {name}: {detail}", flush=True)
    assert ok, detail


def cloud(placement):
    records = generate_point_cloud(PointCloudSpec(5000, 1.0, 0))
    return partition(records, P, placement, seed=0, dimension=3)


def runtime(**kw):
    return RuntimeConfig(p=P, time_budget_ms=BUDGET_MS, clock=VirtualClock(), seed=0,
                         per_worker_snapshots=False, **kw)


@pytest.fixture(scope="module")
def uniform():
    return cloud(Placement.UNIFORM)


@pytest.fixture(scope="module")
def optimum(uniform):
    _, opt = pooled_gd_oracle(uniform, SPEC)
    return opt


@pytest.fixture(scope="module")
def uniform_runs(uniform):
    return {alg: SOLVERS[alg](uniform, SPEC, default_hyperparams(alg), runtime()) for alg in SOLVERS}


def random_smooth_point(rng, loss_kind, reg):
    """A random (w, record) away from the hinge and L1 kinks."""
    while True:
        d = int(rng.integers(1, 10))
        w = rng.normal(size=d)
        r = Record(rng.normal(size=d), float(rng.choice([-1, 1])))
        if loss_kind is Loss.HINGE and abs(1 - r.label * float(np.dot(w, r.features))) <= 1e-3:
            continue
        if reg is Reg.L1 and np.min(np.abs(w)) <= 1e-3:
            continue
        return w, r


def test_1_gradient_correctness(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for loss_kind in Loss:
        for reg in Reg:
            spec = ObjectiveSpec(loss_kind, reg, 0.3)
            for _ in range(100):
                w, r = random_smooth_point(rng, loss_kind, reg)
                f = lambda v: loss(spec, v, r) + spec.lam * reg_penalty(reg, v)
                g = loss_subgradient(spec, w, r) + spec.lam * reg_subgradient(reg, w)
                worst = max(worst, rel_err(g, central_diff(f, w, h=1e-6)))
    took = time.perf_counter() - start
    report(capsys, 1, "gradient vs central differences", worst <= 1e-5 and took < 5,
           f"worst relative error {worst:.2e} over 4x100 points (limit 1e-5), {took:.2f} s")


def test_2_consensus_prox_oracle(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for reg in Reg:
        for _ in range(100):
            params = ConsensusParams(rho=float(10 ** rng.uniform(-2, 1)), p=int(rng.integers(1, 9)),
                                     lam=float(10 ** rng.uniform(-3, 0.5)), reg=reg)
            d = int(rng.integers(1, 6))
            w_bar, mu_bar = rng.normal(size=d), rng.normal(scale=0.1, size=d)
            diff = consensus_update(params, w_bar, mu_bar) - numeric_consensus(params, w_bar, mu_bar)
            worst = max(worst, float(np.max(np.abs(diff))))
    took = time.perf_counter() - start
    report(capsys, 2, "consensus update vs numeric minimizer", worst <= 1e-6 and took < 5,
           f"worst elementwise gap {worst:.2e} over 2x100 instances (limit 1e-6), {took:.2f} s")


@pytest.mark.parametrize("alg", list(SOLVERS))
def test_3_convergence_to_optimum(alg, uniform, optimum, uniform_runs, capsys):
    res = uniform_runs[alg]
    ratio = res.final_objective(SPEC, uniform) / optimum
    report(capsys, 3, f"{alg} within 5% of the pooled optimum", ratio <= 1.05 and not res.diverged,
           f"objective {res.final_objective(SPEC, uniform):.6f} vs optimum {optimum:.6f}, ratio {ratio:.4f}")


@pytest.mark.parametrize("alg", ["bsp-admm", "asip-admm"])
def test_4_admm_agreement(alg, uniform_runs, capsys):
    gap = uniform_runs[alg].max_consensus_gap()
    report(capsys, 4, f"{alg} consensus agreement", gap <= 1e-2,
           f"max_i ||w_i - z|| = {gap:.2e} (limit 1e-2)")


def test_5_skew_separation(capsys):
    data = cloud(Placement.SKEWED_BY_LABEL)
    obj = {}
    for alg in ("avg", "bsp-admm", "asip-admm"):
        res = SOLVERS[alg](data, SPEC, default_hyperparams(alg), runtime())
        obj[alg] = res.final_objective(SPEC, data)
    worst_admm = max(obj["bsp-admm"], obj["asip-admm"])
    margin = obj["avg"] / worst_admm
    ok = obj["avg"] > obj["bsp-admm"] and obj["avg"] > obj["asip-admm"] and \
        margin >= SKEW_MARGIN * (1 - SLACK)
    report(capsys, 5, "AVG worse than both ADMMs on skewed data", ok,
           f"AVG {obj['avg']:.4f}, BSP-ADMM {obj['bsp-admm']:.4f}, ASIP-ADMM {obj['asip-admm']:.4f}; "
           f"margin {margin:.2f} (needs >= {SKEW_MARGIN * (1 - SLACK):.2f})")


def perturbation(alg, mode, **kw):
    cfg = ExperimentConfig(algorithm=alg, n_per_class=5000, p=P, time_budget_ms=BUDGET_MS, seed=0,
                           per_worker_snapshots=False, **kw)
    return run_perturbation_suite(cfg, mode)


def test_6_straggler(capsys):
    # 500 ms pause in every 2000 ms: a 25% duty cycle
    kw = dict(straggler_worker=0, straggler_pause_ms=500.0, straggler_period_ms=2000.0)
    bsp = perturbation("bsp-gd", "straggler", **kw)
    asip = perturbation("asip-sgd", "straggler", **kw)
    ok = all(b >= a for b, a in zip(bsp.ratios, asip.ratios))
    report(capsys, 6, "straggler hurts BSP-GD at least as much as ASIP-SGD", ok,
           "checkpoint ratios " + ", ".join(
               f"{t / 1000:g}s: BSP-GD {b:.4f} vs ASIP-SGD {a:.4f}"
               for t, b, a in zip(bsp.checkpoints_ms, bsp.ratios, asip.ratios)))


@pytest.mark.parametrize("alg", ["asip-sgd", "asip-admm"])
def test_7_fault_tolerance(alg, capsys):
    rep = perturbation(alg, "fault", fault_worker=0, fault_at_fraction=0.3)
    ratio = rep.ratios[-1]
    report(capsys, 7, f"{alg} recovers from a reset at 30% of the budget", abs(ratio - 1) <= 0.10,
           f"end-of-budget objective ratio {ratio:.4f} (allowed 0.90..1.10)")


def test_8_determinism(tmp_path, capsys):
    cases = [("bsp-gd", P), ("bsp-admm", P)] + [(alg, 1) for alg in SOLVERS]
    differing = []
    for alg, p in cases:
        cfg = ExperimentConfig(algorithm=alg, n_per_class=5000, p=p, time_budget_ms=3000.0, seed=3)
        outputs = []
        for k in range(2):
            path = tmp_path / f"{alg}-{p}-{k}.csv"
            run_experiment(cfg, output=path)
            outputs.append(path.read_bytes())
        if outputs[0] != outputs[1]:
            differing.append(f"{alg}/p={p}")
    report(capsys, 8, "repeated seeded runs write identical CSV bytes", not differing,
           f"{len(cases)} configurations checked; differing: {differing or 'none'}")


def test_9_runtime_contract(capsys):
    start = time.perf_counter()
    ops = sum(run_random_ops(seed, 1500) for seed in range(10))
    took = time.perf_counter() - start
    report(capsys, 9, "push/poll contract under random operations", ops >= 10_000 and took < 10,
           f"{ops} operations (FIFO per pair, no self-delivery, drop-oldest, non-blocking poll), "
           f"{took:.2f} s")
