"""Reference implementations the tests check the package against.

Each is written directly from the defining formula in plain Python or with
scipy, sharing no code with the package's numeric kernels.
"""

import math
import time
from collections import deque

import numpy as np
from scipy.optimize import minimize_scalar

from asiplab.objective import Loss, Reg, reg_penalty
from asiplab.runtime import AsipEnvelope, Bus, EnvelopeKind


def central_diff(f, w, h=1e-6):
    g = np.zeros_like(w)
    for j in range(len(w)):
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-8)


def consensus_objective(params, w_bar, mu_bar):
    center = w_bar + mu_bar / params.rho
    prho = params.p * params.rho

    def f(z):
        return params.lam * reg_penalty(params.reg, z) + 0.5 * prho * np.sum((z - center) ** 2)
    return f, center, prho


def numeric_consensus(params, w_bar, mu_bar):
    """Numeric minimizer of the consensus objective.

    The objective separates by coordinate, so each coordinate gets a bounded
    scalar search; for L1 the kink at zero is also tried as a candidate.
    """
    f, center, prho = consensus_objective(params, w_bar, mu_bar)
    z = np.zeros_like(center)
    for j in range(len(center)):
        def fj(v, j=j):
            if params.reg is Reg.L1:
                return params.lam * abs(v) + 0.5 * prho * (v - center[j]) ** 2
            return params.lam * 0.5 * v * v + 0.5 * prho * (v - center[j]) ** 2
        lo, hi = sorted((0.0, center[j]))
        res = minimize_scalar(fj, bounds=(lo - 1.0, hi + 1.0), method="bounded",
                              options={"xatol": 1e-12})
        z[j] = res.x
        if params.reg is Reg.L1 and fj(0.0) <= fj(z[j]):
            z[j] = 0.0
    return z


def py_coef(loss_kind, y, m):
    if loss_kind is Loss.HINGE:
        return -y if y * m < 1.0 else 0.0
    s = -y * m
    sig = 1.0 / (1.0 + math.exp(-s)) if s >= 0 else math.exp(s) / (1.0 + math.exp(s))
    return -y * sig


def serial_sgd(records, spec, hp, seed, steps):
    """Mini-batch SGD written directly from the update rule, in plain Python.

    Batches are drawn the way every solver draws them: uniform row indices
    with replacement, from a generator seeded with the worker seed, pulled
    in blocks of 4096 batches.
    """
    rng = np.random.default_rng(seed)
    rows = [([float(v) for v in r.features], r.label) for r in records]
    d = len(rows[0][0])
    w = [0.0] * d
    b = hp.batch_size
    idx = []
    for t in range(1, steps + 1):
        if not idx:
            idx = rng.integers(0, len(rows), size=(4096, b)).tolist()[::-1]
        batch = idx.pop()
        g = [0.0] * d
        for r in batch:
            x, y = rows[r]
            m = 0.0
            for j in range(d):
                if x[j] != 0.0:
                    m += x[j] * w[j]
            c = py_coef(spec.loss, y, m)
            if c != 0.0:
                for j in range(d):
                    if x[j] != 0.0:
                        g[j] += c * x[j]
        step = hp.eta0 / math.sqrt(t)
        for j in range(d):
            gj = g[j] / b
            if spec.reg is Reg.L2:
                gj = gj + spec.lam * w[j]
            else:
                gj = gj + spec.lam * (0.0 if w[j] == 0 else math.copysign(1.0, w[j]))
            w[j] = w[j] - step * gj
    return np.array(w)


def run_random_ops(seed, n_ops):
    """Drive a bus with random pushes and polls and check it against a plain
    list model of each inbox."""
    rng = np.random.default_rng(seed)
    p = int(rng.integers(1, 7))
    cap = int(rng.integers(1, 6))
    bus = Bus(1, capacity=cap)
    chans = [bus.attach(i) for i in range(p)]
    model = [deque() for _ in range(p)]
    sent = [0] * p
    last_seen = [[-1] * p for _ in range(p)]
    pushes = 0
    for _ in range(n_ops):
        i = int(rng.integers(p))
        if rng.random() < 0.5:
            e = AsipEnvelope(i, EnvelopeKind.GRADIENT_DELTA, (np.array([float(sent[i])]),))
            sent[i] += 1
            chans[i].push(e)
            pushes += 1
            for j in range(p):
                if j != i:
                    model[j].append(e)
                    if len(model[j]) > cap:
                        model[j].popleft()
        else:
            start = time.perf_counter()
            got = chans[i].poll()
            assert time.perf_counter() - start < 0.05
            want = model[i].popleft() if model[i] else None
            assert got is want
            if got is not None:
                assert got.sender != i
                # per-pair FIFO: sequence numbers from one sender only increase
                assert int(got.payload[0][0]) > last_seen[i][got.sender]
                last_seen[i][got.sender] = int(got.payload[0][0])
    c = bus.counters
    assert c.pushed == pushes
    assert c.enqueued == pushes * (p - 1)
    assert c.enqueued - c.dropped - c.polled == sum(len(m) for m in model)
    if c.dropped == 0:
        # nothing lost: everything enqueued is either polled or still queued
        assert c.enqueued == c.polled + sum(bus.pending(ch) for ch in chans)
    return n_ops
