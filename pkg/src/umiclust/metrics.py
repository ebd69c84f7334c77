"""Partition comparison metrics and repeated-run stability.

All metrics are pair-counting statistics computed from the contingency
table in O(N + table size), never by the O(N^2) pair loop (which the test
suite keeps as an independent oracle). Every metric is invariant to
relabeling either partition and symmetric in its two arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .state import Partition

__all__ = [
    "PairCounts",
    "pair_counts",
    "rand_index",
    "adjusted_rand_index",
    "huberts_index",
    "coassignment_stability",
    "canonicalize_labels",
]


def _labels(p) -> np.ndarray:
    if isinstance(p, Partition):
        return p.labels
    arr = np.asarray(p, dtype=np.int64)
    if arr.ndim != 1:
        raise ValueError("partition labels must be one-dimensional")
    return arr


def canonicalize_labels(labels) -> np.ndarray:
    """Relabel by first occurrence: the first cell gets 0, the next new
    label 1, and so on. Two labelings of the same partition canonicalize
    identically."""
    arr = _labels(labels)
    seen: dict[int, int] = {}
    out = np.empty_like(arr)
    for i, x in enumerate(arr.tolist()):
        out[i] = seen.setdefault(x, len(seen))
    return out


@dataclass(frozen=True)
class PairCounts:
    """Counts of the N(N-1)/2 unordered cell pairs by agreement type.

    a: together in both partitions; b: together in the first only;
    c: together in the second only; d: separated in both.
    """

    a: int
    b: int
    c: int
    d: int

    @property
    def total(self) -> int:
        return self.a + self.b + self.c + self.d


def _contingency(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Contingency counts plus row/column marginals, labels compacted."""
    xi = np.unique(x, return_inverse=True)[1]
    yi = np.unique(y, return_inverse=True)[1]
    nx = int(xi.max()) + 1 if len(xi) else 0
    ny = int(yi.max()) + 1 if len(yi) else 0
    flat = np.bincount(xi * ny + yi, minlength=nx * ny)
    table = flat.reshape(nx, ny)
    return table, table.sum(axis=1), table.sum(axis=0)


def pair_counts(p1, p2) -> PairCounts:
    """Exact pair counts from the contingency table."""
    x, y = _labels(p1), _labels(p2)
    if len(x) != len(y):
        raise ValueError(f"partition length mismatch: {len(x)} vs {len(y)}")
    n = len(x)
    table, rows, cols = _contingency(x, y)
    c2 = lambda v: (v * (v - 1)) // 2  # noqa: E731
    a = int(c2(table.astype(np.int64)).sum())
    b = int(c2(rows.astype(np.int64)).sum()) - a
    c = int(c2(cols.astype(np.int64)).sum()) - a
    d = n * (n - 1) // 2 - a - b - c
    return PairCounts(a, b, c, d)


def rand_index(p1, p2) -> float:
    """(a + d) / all pairs; 1.0 is a perfect match."""
    pc = pair_counts(p1, p2)
    if pc.total == 0:
        raise ValueError("rand index needs at least two cells")
    return (pc.a + pc.d) / pc.total


def adjusted_rand_index(p1, p2) -> float:
    """Chance-corrected Rand index (Hubert-Arabie form).

    Scores 1 for identical partitions and 0 in expectation for independent
    random ones. The degenerate case where the correction denominator
    vanishes (both partitions the same single block, or both all
    singletons) is scored 1.0 by convention: the partitions are identical.
    """
    x, y = _labels(p1), _labels(p2)
    if len(x) != len(y):
        raise ValueError(f"partition length mismatch: {len(x)} vs {len(y)}")
    n = len(x)
    if n < 2:
        raise ValueError("adjusted rand index needs at least two cells")
    table, rows, cols = _contingency(x, y)
    c2 = lambda v: (v * (v - 1)) / 2.0  # noqa: E731
    sum_ij = float(c2(table.astype(np.float64)).sum())
    sum_i = float(c2(rows.astype(np.float64)).sum())
    sum_j = float(c2(cols.astype(np.float64)).sum())
    expected = sum_i * sum_j / c2(float(n))
    max_term = 0.5 * (sum_i + sum_j)
    if max_term == expected:
        return 1.0
    return (sum_ij - expected) / (max_term - expected)


def huberts_index(p1, p2) -> float:
    """Agreement minus disagreement over all pairs: (a+d-b-c)/total = 2 RI - 1."""
    return 2.0 * rand_index(p1, p2) - 1.0


def coassignment_stability(runs: list) -> np.ndarray:
    """Per-cell stability of cluster membership across repeated runs.

    For each unordered pair of runs and each cell, the Jaccard overlap of
    the cell's cluster (as a set of cells, itself included) in the two
    runs; the returned value is the mean over run pairs. 1.0 means the
    cell's cluster membership never changed.
    """
    labels = [_labels(r) for r in runs]
    if len(labels) < 2:
        raise ValueError("stability needs at least two runs")
    n = len(labels[0])
    for lab in labels:
        if len(lab) != n:
            raise ValueError("all runs must label the same number of cells")
    acc = np.zeros(n, dtype=np.float64)
    n_pairs = 0
    for i in range(len(labels)):
        for j in range(i + 1, len(labels)):
            table, rows, cols = _contingency(labels[i], labels[j])
            xi = np.unique(labels[i], return_inverse=True)[1]
            yi = np.unique(labels[j], return_inverse=True)[1]
            inter = table[xi, yi].astype(np.float64)
            union = rows[xi] + cols[yi] - inter
            acc += inter / union
            n_pairs += 1
    return acc / n_pairs
