"""Vectors, records and partitioned datasets.

Model vectors are plain 1-D ``float64`` numpy arrays.  Feature vectors are
either dense arrays or :class:`SparseVector` instances.  Every partition is
additionally compiled to CSR arrays so the numeric kernels can work on
dense and sparse data through one code path.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np


class DimensionError(ValueError):
    """Raised when vector dimensions are incompatible."""


class NumericError(ArithmeticError):
    """Raised when an operation would produce NaN or infinity."""


@dataclass(frozen=True)
class SparseVector:
    """Sparse feature vector with strictly increasing 0-based indices."""

    indices: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.indices) != len(self.values):
            raise ValueError("indices and values must have equal length")
        for a, b in zip(self.indices, self.indices[1:]):
            if b <= a:
                raise ValueError("sparse indices must be strictly increasing")
        if self.indices and self.indices[0] < 0:
            raise ValueError("sparse indices must be non-negative")
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @classmethod
    def from_pairs(cls, pairs):
        pairs = sorted(pairs)
        return cls(tuple(i for i, _ in pairs), tuple(v for _, v in pairs))

    @classmethod
    def from_dense(cls, x):
        x = np.asarray(x, dtype=np.float64)
        nz = np.flatnonzero(x)
        return cls(tuple(int(i) for i in nz), tuple(float(x[i]) for i in nz))

    @property
    def min_dimension(self):
        return self.indices[-1] + 1 if self.indices else 0

    def to_dense(self, d):
        if self.min_dimension > d:
            raise DimensionError(f"sparse vector needs dimension {self.min_dimension} > {d}")
        out = np.zeros(d)
        out[list(self.indices)] = self.values
        return out


FeatureVector = Union[np.ndarray, SparseVector]


def feature_dimension(x: FeatureVector) -> int:
    """Smallest model dimension that ``x`` is compatible with."""
    if isinstance(x, SparseVector):
        return x.min_dimension
    return len(x)


@dataclass(frozen=True, eq=False)
class Record:
    features: FeatureVector
    label: float

    def __post_init__(self):
        if self.label not in (-1.0, 1.0):
            raise ValueError(f"label must be -1 or +1, got {self.label!r}")
        object.__setattr__(self, "label", float(self.label))
        if not isinstance(self.features, SparseVector):
            arr = np.array(self.features, dtype=np.float64)
            if arr.ndim != 1:
                raise ValueError("dense features must be one-dimensional")
            arr.flags.writeable = False
            object.__setattr__(self, "features", arr)

    def key(self):
        """Hashable identity used to compare record multisets."""
        if isinstance(self.features, SparseVector):
            return ("s", self.features.indices, self.features.values, self.label)
        return ("d", tuple(self.features.tolist()), self.label)

    def __eq__(self, other):
        return isinstance(other, Record) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())


def _check_model(b):
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1 or len(b) < 1:
        raise DimensionError("model vector must be one-dimensional with d >= 1")
    return b


def dot(a: FeatureVector, b) -> float:
    """Inner product of a feature vector with a model vector.

    Dense and sparse encodings of the same vector give bit-identical results:
    the products are summed with :func:`math.fsum`, which is exact and
    unaffected by zero terms.
    """
    b = _check_model(b)
    if isinstance(a, SparseVector):
        if a.min_dimension > len(b):
            raise DimensionError(f"index {a.min_dimension - 1} out of range for dimension {len(b)}")
        return math.fsum(v * float(b[i]) for i, v in zip(a.indices, a.values))
    a = np.asarray(a, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {len(a)} vs {len(b)}")
    return math.fsum((a * b).tolist())


def axpy(alpha: float, x, y) -> np.ndarray:
    """Return ``y + alpha * x`` as a new array; ``y`` is left untouched."""
    y = _check_model(y)
    out = y.copy()
    if isinstance(x, SparseVector):
        if x.min_dimension > len(y):
            raise DimensionError(f"index {x.min_dimension - 1} out of range for dimension {len(y)}")
        idx = list(x.indices)
        with np.errstate(over="ignore", invalid="ignore"):
            out[idx] += alpha * np.asarray(x.values)
    else:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != y.shape:
            raise DimensionError(f"dimension mismatch: {len(x)} vs {len(y)}")
        with np.errstate(over="ignore", invalid="ignore"):
            out += alpha * x
    if not np.all(np.isfinite(out)):
        raise NumericError("axpy produced a non-finite value")
    return out


@dataclass(frozen=True)
class CsrBlock:
    """Records compiled to CSR arrays plus a label vector."""

    data: np.ndarray
    indices: np.ndarray
    indptr: np.ndarray
    labels: np.ndarray
    dimension: int

    @property
    def n_rows(self):
        return len(self.labels)


def compile_records(records: Sequence[Record], d: int) -> CsrBlock:
    data: list[float] = []
    indices: list[int] = []
    indptr = [0]
    labels = np.empty(len(records))
    for k, r in enumerate(records):
        f = r.features
        if isinstance(f, SparseVector):
            if f.min_dimension > d:
                raise DimensionError(f"record {k} exceeds dimension {d}")
            for i, v in zip(f.indices, f.values):
                if v != 0.0:
                    indices.append(i)
                    data.append(v)
        else:
            if len(f) > d:
                raise DimensionError(f"record {k} exceeds dimension {d}")
            nz = np.flatnonzero(f)
            indices.extend(nz.tolist())
            data.extend(f[nz].tolist())
        indptr.append(len(indices))
        labels[k] = r.label
    return CsrBlock(
        np.asarray(data, dtype=np.float64),
        np.asarray(indices, dtype=np.int64),
        np.asarray(indptr, dtype=np.int64),
        labels,
        d,
    )


def concat_blocks(blocks: Sequence[CsrBlock]) -> CsrBlock:
    offsets = np.cumsum([0] + [len(b.data) for b in blocks])
    indptr = [np.zeros(1, dtype=np.int64)]
    for b, off in zip(blocks, offsets):
        indptr.append(b.indptr[1:] + off)
    return CsrBlock(
        np.concatenate([b.data for b in blocks]),
        np.concatenate([b.indices for b in blocks]),
        np.concatenate(indptr),
        np.concatenate([b.labels for b in blocks]),
        blocks[0].dimension,
    )


class Placement(enum.Enum):
    UNIFORM = "uniform"
    SKEWED_BY_LABEL = "skewed"


@dataclass(eq=False)
class PartitionedDataset:
    partitions: list[list[Record]]
    dimension: int
    _blocks: list[CsrBlock] = field(default=None, init=False, repr=False)
    _pooled: CsrBlock = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if len(self.partitions) < 1:
            raise ValueError("need at least one partition")
        if self.dimension < 1:
            raise DimensionError("dimension must be >= 1")
        for part in self.partitions:
            for r in part:
                if feature_dimension(r.features) > self.dimension:
                    raise DimensionError("record feature dimension exceeds dataset dimension")

    @property
    def p(self):
        return len(self.partitions)

    @property
    def total_count(self):
        return sum(len(part) for part in self.partitions)

    def records(self):
        """All records in partition order, then record order."""
        return [r for part in self.partitions for r in part]

    @property
    def blocks(self) -> list[CsrBlock]:
        if self._blocks is None:
            self._blocks = [compile_records(part, self.dimension) for part in self.partitions]
        return self._blocks

    @property
    def pooled(self) -> CsrBlock:
        if self._pooled is None:
            self._pooled = concat_blocks(self.blocks)
        return self._pooled


def _deal(records, p, rng):
    order = rng.permutation(len(records))
    parts = [[] for _ in range(p)]
    for k, idx in enumerate(order):
        parts[k % p].append(records[idx])
    return parts


def partition(records: Sequence[Record], p: int, policy=Placement.UNIFORM, seed: int = 0,
              dimension: int | None = None) -> PartitionedDataset:
    """Split ``records`` into ``p`` partitions.

    ``UNIFORM`` shuffles with ``seed`` and deals round-robin.  ``SKEWED_BY_LABEL``
    gives each partition records of a single label: label -1 occupies the first
    block of partitions and label +1 the rest, with block sizes proportional to
    the class counts.
    """
    policy = Placement(policy)
    records = list(records)
    if not records:
        raise ValueError("records must be non-empty")
    if p < 1:
        raise ValueError("p must be >= 1")
    if p > len(records):
        raise ValueError(f"p={p} exceeds the number of records ({len(records)})")
    d = dimension or max(feature_dimension(r.features) for r in records)
    rng = np.random.default_rng(seed)

    if policy is Placement.UNIFORM:
        return PartitionedDataset(_deal(records, p, rng), d)

    neg = [r for r in records if r.label < 0]
    pos = [r for r in records if r.label > 0]
    if not neg or not pos:
        raise ValueError("skewed placement needs both labels present")
    if p < 2:
        raise ValueError("skewed placement needs p >= 2")
    p_neg = min(max(1, round(p * len(neg) / len(records))), p - 1)
    p_pos = p - p_neg
    if p_neg > len(neg) or p_pos > len(pos):
        raise ValueError("too few records of one label for skewed placement")
    parts = _deal(neg, p_neg, rng) + _deal(pos, p_pos, rng)
    return PartitionedDataset(parts, d)
