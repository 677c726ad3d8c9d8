"""Losses, regularizers, the regularized empirical risk and the ADMM consensus step.

Labels are always in {-1, +1}.  The hinge subgradient is ``-y x`` on the
active side of the margin; the logistic gradient is ``-y sigmoid(-y w.x) x``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from asiplab import kernels
from asiplab.core import (
    CsrBlock,
    NumericError,
    PartitionedDataset,
    Record,
    axpy,
    dot,
)


class Loss(enum.Enum):
    HINGE = "svm"
    LOGISTIC = "lr"

    @property
    def code(self):
        return kernels.HINGE if self is Loss.HINGE else kernels.LOGISTIC


class Reg(enum.Enum):
    L1 = "l1"
    L2 = "l2"

    @property
    def code(self):
        return kernels.L1 if self is Reg.L1 else kernels.L2


@dataclass(frozen=True)
class ObjectiveSpec:
    loss: Loss = Loss.HINGE
    reg: Reg = Reg.L2
    lam: float = 1e-2

    def __post_init__(self):
        object.__setattr__(self, "loss", Loss(self.loss))
        object.__setattr__(self, "reg", Reg(self.reg))
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError(f"lambda must be finite and non-negative, got {self.lam}")

    @property
    def name(self):
        return f"{self.loss.value}+{self.reg.value}"


@dataclass(frozen=True)
class ConsensusParams:
    rho: float
    p: int
    lam: float
    reg: Reg

    def __post_init__(self):
        object.__setattr__(self, "reg", Reg(self.reg))
        if not (math.isfinite(self.rho) and self.rho > 0):
            raise ValueError(f"rho must be finite and positive, got {self.rho}")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lambda must be finite and non-negative")


def _finite_model(w):
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise NumericError("model vector has non-finite entries")
    return w


def _log1pexp(s):
    if s <= 0:
        return math.log1p(math.exp(s))
    return s + math.log1p(math.exp(-s))


def _sigmoid(s):
    if s >= 0:
        return 1.0 / (1.0 + math.exp(-s))
    e = math.exp(s)
    return e / (1.0 + e)


def loss(spec: ObjectiveSpec, w, r: Record) -> float:
    w = _finite_model(w)
    m = dot(r.features, w)
    if spec.loss is Loss.HINGE:
        return max(0.0, 1.0 - r.label * m)
    return _log1pexp(-r.label * m)


def loss_subgradient(spec: ObjectiveSpec, w, r: Record) -> np.ndarray:
    w = _finite_model(w)
    y = r.label
    m = dot(r.features, w)
    if spec.loss is Loss.HINGE:
        coef = -y if y * m < 1.0 else 0.0
    else:
        coef = -y * _sigmoid(-y * m)
    if not math.isfinite(coef):
        raise NumericError("non-finite loss gradient coefficient")
    return axpy(coef, r.features, np.zeros(len(w)))


def reg_penalty(reg: Reg, w) -> float:
    w = _finite_model(w)
    if Reg(reg) is Reg.L1:
        return float(np.sum(np.abs(w)))
    return 0.5 * float(np.dot(w, w))


def reg_subgradient(reg: Reg, w) -> np.ndarray:
    """``w`` for L2; ``sign(w)`` for L1, choosing 0 at the kink."""
    w = _finite_model(w)
    if Reg(reg) is Reg.L1:
        return np.sign(w)
    return w.copy()


def block_loss_sum(spec: ObjectiveSpec, w, block: CsrBlock) -> float:
    return kernels.loss_sum(block.data, block.indices, block.indptr, block.labels,
                            np.ascontiguousarray(w, dtype=np.float64), spec.loss.code)


def full_objective(spec: ObjectiveSpec, w, data: PartitionedDataset) -> float:
    """Average loss over every record plus ``lam * R(w)``.

    Summation runs over partitions in order, then records in order.
    """
    n = data.total_count
    if n < 1:
        raise ValueError("dataset is empty")
    w = _finite_model(w)
    if len(w) != data.dimension:
        raise ValueError(f"model dimension {len(w)} != dataset dimension {data.dimension}")
    return block_loss_sum(spec, w, data.pooled) / n + spec.lam * reg_penalty(spec.reg, w)


def safe_objective(spec: ObjectiveSpec, w, data: PartitionedDataset) -> float:
    """``full_objective`` that reports divergence as ``inf`` instead of raising."""
    if not np.all(np.isfinite(w)):
        return math.inf
    return full_objective(spec, w, data)


def soft_threshold(v, kappa):
    """``sign(v) * max(|v| - kappa, 0)``; works on scalars and arrays."""
    if np.any(np.asarray(kappa) < 0):
        raise ValueError("kappa must be non-negative")
    out = np.sign(v) * np.maximum(np.abs(v) - kappa, 0.0)
    if np.ndim(out) == 0:
        return float(out)
    return out


def consensus_update(params: ConsensusParams, w_bar, mu_bar) -> np.ndarray:
    """Minimize ``lam R(z) + (p rho / 2) ||z - (w_bar + mu_bar / rho)||^2``."""
    w_bar = np.asarray(w_bar, dtype=np.float64)
    mu_bar = np.asarray(mu_bar, dtype=np.float64)
    if w_bar.shape != mu_bar.shape:
        raise ValueError("w_bar and mu_bar differ in dimension")
    center = w_bar + mu_bar / params.rho
    prho = params.p * params.rho
    if params.reg is Reg.L2:
        return (prho / (params.lam + prho)) * center
    return soft_threshold(center, params.lam / prho)


__all__ = [
    "ConsensusParams",
    "Loss",
    "ObjectiveSpec",
    "Reg",
    "block_loss_sum",
    "consensus_update",
    "full_objective",
    "loss",
    "loss_subgradient",
    "reg_penalty",
    "reg_subgradient",
    "safe_objective",
    "soft_threshold",
]
