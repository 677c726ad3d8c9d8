"""Compiled inner loops over CSR blocks.

All reductions run sequentially in row order, never vectorized, so results
are reproducible bit-for-bit and match a plain Python loop doing the same
arithmetic.  Loss and regularizer kinds are passed as small int codes.
"""

import math

import numpy as np
from numba import njit

HINGE = 0
LOGISTIC = 1
L1 = 0
L2 = 1


@njit(cache=True, nogil=True)
def row_dot(data, indices, indptr, r, w):
    s = 0.0
    for k in range(indptr[r], indptr[r + 1]):
        s += data[k] * w[indices[k]]
    return s


@njit(cache=True, nogil=True)
def log1pexp(s):
    if s <= 0.0:
        return math.log1p(math.exp(s))
    return s + math.log1p(math.exp(-s))


@njit(cache=True, nogil=True)
def sigmoid(s):
    if s >= 0.0:
        return 1.0 / (1.0 + math.exp(-s))
    e = math.exp(s)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def loss_value(kind, y, m):
    if kind == HINGE:
        v = 1.0 - y * m
        return v if v > 0.0 else 0.0
    return log1pexp(-y * m)


@njit(cache=True, nogil=True)
def loss_coef(kind, y, m):
    """d loss / d (w.x); the loss gradient is this times x."""
    if kind == HINGE:
        if y * m < 1.0:
            return -y
        return 0.0
    return -y * sigmoid(-y * m)


@njit(cache=True, nogil=True)
def reg_sub(kind, v):
    if kind == L2:
        return v
    if v > 0.0:
        return 1.0
    if v < 0.0:
        return -1.0
    return 0.0


@njit(cache=True, nogil=True)
def loss_sum(data, indices, indptr, labels, w, kind):
    total = 0.0
    for r in range(len(labels)):
        total += loss_value(kind, labels[r], row_dot(data, indices, indptr, r, w))
    return total


@njit(cache=True, nogil=True)
def loss_grad_sum(data, indices, indptr, labels, w, kind, out):
    """Accumulate the un-normalized loss gradient of every row into ``out``."""
    for r in range(len(labels)):
        c = loss_coef(kind, labels[r], row_dot(data, indices, indptr, r, w))
        if c != 0.0:
            for k in range(indptr[r], indptr[r + 1]):
                out[indices[k]] += c * data[k]


@njit(cache=True, nogil=True)
def _batch_grad(data, indices, indptr, labels, w, kind, rows, g):
    g[:] = 0.0
    for q in range(len(rows)):
        r = rows[q]
        c = loss_coef(kind, labels[r], row_dot(data, indices, indptr, r, w))
        if c != 0.0:
            for k in range(indptr[r], indptr[r + 1]):
                g[indices[k]] += c * data[k]
    b = len(rows)
    for j in range(len(g)):
        g[j] = g[j] / b


@njit(cache=True, nogil=True)
def sgd_steps(data, indices, indptr, labels, w, batches, t0, eta0,
              loss_kind, reg_kind, lam, acc, g):
    """Run ``len(batches)`` mini-batch SGD steps on ``w`` in place.

    Step ``s`` uses step size ``eta0 / sqrt(t0 + s)``.  Each step's gradient
    (loss average plus ``lam`` times the regularizer subgradient) is added to
    ``acc``.  Returns the number of steps completed; fewer than requested
    means ``w`` became non-finite.
    """
    d = len(w)
    for s in range(batches.shape[0]):
        _batch_grad(data, indices, indptr, labels, w, loss_kind, batches[s], g)
        for j in range(d):
            g[j] = g[j] + lam * reg_sub(reg_kind, w[j])
        step = eta0 / math.sqrt(t0 + s)
        finite = True
        for j in range(d):
            w[j] = w[j] - step * g[j]
            acc[j] = acc[j] + g[j]
            if not math.isfinite(w[j]):
                finite = False
        if not finite:
            return s
    return batches.shape[0]


@njit(cache=True, nogil=True)
def admm_primal_steps(data, indices, indptr, labels, w, mu, z, rho, weight,
                      batches, t0, eta0, loss_kind, eps, g):
    """Mini-batch SGD on the augmented local objective, in place on ``w``.

    The gradient is ``weight * loss_grad + mu + rho * (w - z)``.  Stops early
    once the L2 norm of a step falls below ``eps``.  Returns
    ``(steps_done, converged, finite)``.
    """
    d = len(w)
    for s in range(batches.shape[0]):
        _batch_grad(data, indices, indptr, labels, w, loss_kind, batches[s], g)
        step = eta0 / math.sqrt(t0 + s)
        sq = 0.0
        finite = True
        for j in range(d):
            delta = step * (weight * g[j] + mu[j] + rho * (w[j] - z[j]))
            w[j] = w[j] - delta
            sq += delta * delta
            if not math.isfinite(w[j]):
                finite = False
        if not finite:
            return s + 1, False, False
        if math.sqrt(sq) < eps:
            return s + 1, True, True
    return batches.shape[0], False, True


@njit(cache=True, nogil=True)
def dual_averaging_steps(data, indices, indptr, labels, w, own, others, p, batches, t0,
                         eta0, loss_kind, reg_kind, lam, g):
    """Dual-averaging steps in place on ``w`` and ``own``.

    ``own`` is this worker's running gradient sum and ``others`` the sum of
    the peers' gradient sums as last received.  Each step computes
    ``dual = (others + own) / p + grad``, sets ``w = -(eta0 / sqrt(t)) dual``
    and adds ``grad`` to ``own``.  Returns the number of steps completed with
    finite ``w``.
    """
    d = len(w)
    for s in range(batches.shape[0]):
        _batch_grad(data, indices, indptr, labels, w, loss_kind, batches[s], g)
        step = eta0 / math.sqrt(t0 + s)
        finite = True
        for j in range(d):
            gj = g[j] + lam * reg_sub(reg_kind, w[j])
            w[j] = -step * ((others[j] + own[j]) / p + gj)
            own[j] = own[j] + gj
            if not math.isfinite(w[j]):
                finite = False
        if not finite:
            return s
    return batches.shape[0]


@njit(cache=True, nogil=True)
def gd_steps(data, indices, indptr, labels, w, steps, t0, eta0, loss_kind, reg_kind, lam, g):
    """``steps`` full-batch subgradient steps over all rows, step ``eta0/sqrt(t)``."""
    n = len(labels)
    d = len(w)
    for s in range(steps):
        g[:] = 0.0
        loss_grad_sum(data, indices, indptr, labels, w, loss_kind, g)
        step = eta0 / math.sqrt(t0 + s)
        for j in range(d):
            w[j] = w[j] - step * (g[j] / n + lam * reg_sub(reg_kind, w[j]))


def warmup():
    """Trigger compilation of every kernel on a tiny input."""
    data = np.array([1.0, 2.0])
    indices = np.array([0, 1], dtype=np.int64)
    indptr = np.array([0, 1, 2], dtype=np.int64)
    labels = np.array([1.0, -1.0])
    w = np.zeros(2)
    g = np.zeros(2)
    batches = np.zeros((1, 1), dtype=np.int64)
    for kind in (HINGE, LOGISTIC):
        loss_sum(data, indices, indptr, labels, w, kind)
        loss_grad_sum(data, indices, indptr, labels, w, kind, g)
        sgd_steps(data, indices, indptr, labels, w.copy(), batches, 1, 0.1, kind, L2, 0.0, g.copy(), g)
        admm_primal_steps(data, indices, indptr, labels, w.copy(), w, w, 1.0, 1.0,
                          batches, 1, 0.1, kind, 1e-5, g)
        dual_averaging_steps(data, indices, indptr, labels, w.copy(), w.copy(), w, 1, batches, 1,
                             0.1, kind, L2, 0.0, g)
        gd_steps(data, indices, indptr, labels, w.copy(), 1, 1, 0.1, kind, L2, 0.0, g)
