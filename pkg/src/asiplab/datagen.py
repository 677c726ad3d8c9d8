"""Synthetic two-cloud data and a sparse ``label idx:val`` text format."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from asiplab.core import Record, SparseVector

CENTERS = ((0.0, 0.0), (5.0, 5.0))


class ParseError(ValueError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class PointCloudSpec:
    n_per_class: int = 5000
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        if not self.sigma >= 0:
            raise ValueError("sigma must be non-negative")


def generate_point_cloud(spec: PointCloudSpec) -> list[Record]:
    """Two Gaussian clouds around (0,0) (label -1) and (5,5) (label +1).

    Every point gets a constant third coordinate of 1.0 as a bias feature.
    The -1 class comes first in the returned list.
    """
    rng = np.random.default_rng(spec.seed)
    records = []
    for label, center in ((-1.0, CENTERS[0]), (1.0, CENTERS[1])):
        noise = rng.standard_normal((spec.n_per_class, 2))
        pts = np.asarray(center) + spec.sigma * noise
        for x, y in pts:
            records.append(Record(np.array([x, y, 1.0]), label))
    return records


def _parse_label(tok, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(lineno, f"bad label {tok!r}") from None
    if v in (1.0,):
        return 1.0
    if v in (-1.0, 0.0):
        return -1.0
    raise ParseError(lineno, f"label must be -1, 0 or +1, got {tok!r}")


def parse_sparse_line(line: str, lineno: int = 1) -> Record:
    parts = line.split()
    if not parts:
        raise ParseError(lineno, "empty line")
    label = _parse_label(parts[0], lineno)
    pairs = []
    for tok in parts[1:]:
        idx, sep, val = tok.partition(":")
        if not sep:
            raise ParseError(lineno, f"expected idx:val, got {tok!r}")
        try:
            i, v = int(idx), float(val)
        except ValueError:
            raise ParseError(lineno, f"bad feature {tok!r}") from None
        if i < 1:
            raise ParseError(lineno, f"indices are 1-based, got {i}")
        pairs.append((i - 1, v))
    indices = [i for i, _ in pairs]
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise ParseError(lineno, "feature indices must be strictly increasing")
    return Record(SparseVector(tuple(indices), tuple(v for _, v in pairs)), label)


def load_sparse_text(path) -> tuple[list[Record], int]:
    """Read a sparse text file; returns the records and the largest index seen.

    Blank lines are skipped.  Labels 0/1 are mapped to -1/+1.
    """
    records = []
    dim = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = parse_sparse_line(line, lineno)
            dim = max(dim, rec.features.min_dimension)
            records.append(rec)
    if not records:
        raise ValueError(f"{path}: no records")
    return records, max(dim, 1)


def format_record(r: Record) -> str:
    f = r.features
    if not isinstance(f, SparseVector):
        f = SparseVector.from_dense(f)
    label = "+1" if r.label > 0 else "-1"
    feats = " ".join(f"{i + 1}:{v!r}" for i, v in zip(f.indices, f.values))
    return f"{label} {feats}".rstrip()


def write_sparse_text(path, records) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(format_record(r) + "\n")
    return path
