"""Core domain types and state bookkeeping for the mixture sampler.

The representations here are the shared contract between ingestion, the
sampler, and the evaluation code:

- ``CountMatrix``: cell-major sparse UMI counts (CSR-like arrays). Cells
  iterate over their own nonzeros on every hot path; gene-major access is
  never needed.
- ``ClusterStats``: dense per-cluster gene-count aggregates. Dense keeps
  split/merge stat transfer O(V).
- ``ModelState``: the instantiated mixture (assignments, weights including
  the unopened-cluster slot, log-probability rows, stats).
- ``SubclusterState``: two-way split scaffolding built by local Gibbs.
- ``Partition``: a flat labeling, the input to the comparison metrics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "CountMatrix",
    "Hyperparams",
    "ClusterStats",
    "ModelState",
    "SubclusterState",
    "Partition",
    "StructureError",
    "recompute_stats",
    "prune_empty_clusters",
]


class StructureError(ValueError):
    """A structural invariant of a domain type was violated."""


@dataclass
class CountMatrix:
    """Sparse V x N nonnegative-integer UMI matrix, cell-major.

    ``indptr``/``indices``/``data`` follow the CSR convention with one row
    per cell: cell ``i`` owns ``indices[indptr[i]:indptr[i+1]]`` (strictly
    increasing gene ids) and the matching positive counts in ``data``.
    Zeros are never stored; a cell may own no entries at all.
    """

    n_genes: int
    n_cells: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    gene_names: list[str] | None = None
    cell_names: list[str] | None = None

    def __post_init__(self):
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int32)
        self.data = np.ascontiguousarray(self.data, dtype=np.int64)

    @classmethod
    def from_cells(
        cls,
        n_genes: int,
        cells: Sequence[Sequence[tuple[int, int]]],
        gene_names: list[str] | None = None,
        cell_names: list[str] | None = None,
    ) -> "CountMatrix":
        """Build from per-cell lists of (gene_index, count) pairs."""
        indptr = np.zeros(len(cells) + 1, dtype=np.int64)
        idx_parts, cnt_parts = [], []
        for i, cell in enumerate(cells):
            pairs = sorted(cell)
            idx_parts.extend(g for g, _ in pairs)
            cnt_parts.extend(c for _, c in pairs)
            indptr[i + 1] = indptr[i] + len(pairs)
        m = cls(
            n_genes=int(n_genes),
            n_cells=len(cells),
            indptr=indptr,
            indices=np.asarray(idx_parts, dtype=np.int32),
            data=np.asarray(cnt_parts, dtype=np.int64),
            gene_names=gene_names,
            cell_names=cell_names,
        )
        m.validate()
        return m

    @classmethod
    def from_dense(
        cls,
        dense,
        gene_names: list[str] | None = None,
        cell_names: list[str] | None = None,
    ) -> "CountMatrix":
        """Build from a dense (V, N) genes-by-cells array."""
        arr = np.asarray(dense)
        v, n = arr.shape
        cells = []
        for i in range(n):
            col = arr[:, i]
            nz = np.nonzero(col)[0]
            cells.append([(int(g), int(col[g])) for g in nz])
        return cls.from_cells(v, cells, gene_names, cell_names)

    def cell(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """The (gene_indices, counts) views of one cell's nonzeros."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def cell_totals(self) -> np.ndarray:
        """Per-cell total UMI (may be 0 for empty cells)."""
        csum = np.concatenate([[0], np.cumsum(self.data)])
        return (csum[self.indptr[1:]] - csum[self.indptr[:-1]]).astype(np.int64)

    def gene_totals(self) -> np.ndarray:
        """Global per-gene UMI totals, dense length V."""
        out = np.zeros(self.n_genes, dtype=np.int64)
        np.add.at(out, self.indices, self.data)
        return out

    def to_dense(self) -> np.ndarray:
        """Dense (V, N) genes-by-cells array. For tests and tiny data only."""
        out = np.zeros((self.n_genes, self.n_cells), dtype=np.int64)
        for i in range(self.n_cells):
            idx, cnt = self.cell(i)
            out[idx, i] = cnt
        return out

    def validate(self) -> None:
        if self.n_genes <= 0 or self.n_cells < 0:
            raise StructureError("matrix dimensions must be positive")
        if self.indptr.shape != (self.n_cells + 1,) or self.indptr[0] != 0:
            raise StructureError("bad indptr")
        if self.indptr[-1] != len(self.indices) or len(self.indices) != len(self.data):
            raise StructureError("index/data length mismatch")
        if np.any(np.diff(self.indptr) < 0):
            raise StructureError("indptr must be nondecreasing")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= self.n_genes):
            raise StructureError("gene index out of range")
        if np.any(self.data < 1):
            raise StructureError("stored counts must be >= 1")
        for i in range(self.n_cells):
            idx = self.indices[self.indptr[i]: self.indptr[i + 1]]
            if len(idx) > 1 and np.any(np.diff(idx) <= 0):
                raise StructureError(f"cell {i}: gene indices not strictly increasing")
        if self.gene_names is not None and len(self.gene_names) != self.n_genes:
            raise StructureError("gene_names length mismatch")
        if self.cell_names is not None and len(self.cell_names) != self.n_cells:
            raise StructureError("cell_names length mismatch")


@dataclass(frozen=True)
class Hyperparams:
    """Model hyperparameters, all strictly positive.

    alpha: concentration of the cluster-count prior.
    lam: symmetric Dirichlet hyperparameter for cluster gene profiles.
    lam_bar: Dirichlet hyperparameter for subcluster profiles used inside
        split proposals.
    """

    alpha: float = 0.5
    lam: float = 1.0
    lam_bar: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.lam > 0 and self.lam_bar > 0):
            raise StructureError("hyperparameters must be strictly positive")


@dataclass
class ClusterStats:
    """Aggregates for one cluster: member count and dense gene counts."""

    n_cells: int
    gene_counts: np.ndarray
    total_umi: int

    @classmethod
    def empty(cls, n_genes: int) -> "ClusterStats":
        return cls(0, np.zeros(n_genes, dtype=np.int64), 0)

    def copy(self) -> "ClusterStats":
        return ClusterStats(self.n_cells, self.gene_counts.copy(), self.total_umi)

    def add_cell(self, gene_idx: np.ndarray, counts: np.ndarray) -> None:
        self.n_cells += 1
        self.gene_counts[gene_idx] += counts
        self.total_umi += int(counts.sum())

    def remove_cell(self, gene_idx: np.ndarray, counts: np.ndarray) -> None:
        self.n_cells -= 1
        self.gene_counts[gene_idx] -= counts
        self.total_umi -= int(counts.sum())

    def merged_with(self, other: "ClusterStats") -> "ClusterStats":
        return ClusterStats(
            self.n_cells + other.n_cells,
            self.gene_counts + other.gene_counts,
            self.total_umi + other.total_umi,
        )

    def validate(self) -> None:
        if self.n_cells < 0 or self.total_umi < 0 or np.any(self.gene_counts < 0):
            raise StructureError("negative cluster statistics")
        if int(self.gene_counts.sum()) != self.total_umi:
            raise StructureError("total_umi does not match gene_counts")


@dataclass
class ModelState:
    """Instantiated mixture state.

    weights has K+1 entries: one per live cluster plus a final slot for
    the not-yet-opened cluster. log_theta is a (K, V) array of normalized
    log-probability rows. stats[k] aggregates exactly the cells with
    assignments == k; no empty cluster survives an iteration boundary.
    """

    assignments: np.ndarray
    weights: np.ndarray
    log_theta: np.ndarray
    stats: list[ClusterStats]

    @property
    def k(self) -> int:
        return len(self.stats)

    @property
    def n_genes(self) -> int:
        return self.log_theta.shape[1]

    def cluster_sizes(self) -> np.ndarray:
        return np.array([s.n_cells for s in self.stats], dtype=np.int64)

    def copy(self) -> "ModelState":
        return ModelState(
            assignments=self.assignments.copy(),
            weights=self.weights.copy(),
            log_theta=self.log_theta.copy(),
            stats=[s.copy() for s in self.stats],
        )

    def validate(self, matrix: CountMatrix | None = None) -> None:
        k = self.k
        if self.weights.shape != (k + 1,):
            raise StructureError("weights must have K+1 entries")
        if np.any(self.weights <= 0):
            raise StructureError("weights must be strictly positive")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise StructureError("weights must sum to 1")
        if self.log_theta.shape[0] != k:
            raise StructureError("log_theta row count != K")
        with np.errstate(over="ignore"):
            row_sums = np.exp(self.log_theta).sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > 1e-9):
            raise StructureError("exp(log_theta) rows must sum to 1")
        if len(self.assignments) and (self.assignments.min() < 0 or self.assignments.max() >= k):
            raise StructureError("assignment id out of range")
        for s in self.stats:
            s.validate()
        if matrix is not None:
            fresh = recompute_stats(matrix, self.assignments, k)
            for a, b in zip(self.stats, fresh):
                if a.n_cells != b.n_cells or a.total_umi != b.total_umi or np.any(
                    a.gene_counts != b.gene_counts
                ):
                    raise StructureError("stats disagree with recomputation")


@dataclass
class SubclusterState:
    """Two-way split scaffolding for one cluster.

    members lists the parent's cells in ascending cell order;
    sub_assignments holds the matching 0/1 side labels.
    """

    parent_cluster: int
    members: np.ndarray
    sub_assignments: np.ndarray
    sub_stats: tuple[ClusterStats, ClusterStats]
    log_theta_bar: np.ndarray  # shape (2, V)

    def side_sizes(self) -> tuple[int, int]:
        return self.sub_stats[0].n_cells, self.sub_stats[1].n_cells

    def validate(self, parent: ClusterStats | None = None) -> None:
        n0, n1 = self.side_sizes()
        if n0 + n1 != len(self.members):
            raise StructureError("subcluster sizes do not partition the members")
        if parent is not None:
            merged = self.sub_stats[0].merged_with(self.sub_stats[1])
            if (
                merged.n_cells != parent.n_cells
                or merged.total_umi != parent.total_umi
                or np.any(merged.gene_counts != parent.gene_counts)
            ):
                raise StructureError("subcluster stats do not sum to the parent")


@dataclass
class Partition:
    """A flat labeling of N cells. Labels need not be contiguous."""

    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or (len(self.labels) and self.labels.min() < 0):
            raise StructureError("labels must be a 1-D vector of nonnegative ints")

    def __len__(self) -> int:
        return len(self.labels)


def recompute_stats(
    matrix: CountMatrix, assignments: np.ndarray, n_clusters: int | None = None
) -> list[ClusterStats]:
    """Exact per-cluster aggregates from scratch.

    The audit path for incremental bookkeeping: slow but obviously
    correct. Clusters never referenced by an assignment come back empty
    only when ``n_clusters`` forces their presence.
    """
    assignments = np.asarray(assignments, dtype=np.int64)
    if len(assignments) != matrix.n_cells:
        raise StructureError("assignment vector length != number of cells")
    if len(assignments):
        if assignments.min() < 0:
            raise StructureError("negative assignment id")
        k = int(assignments.max()) + 1
    else:
        k = 0
    if n_clusters is not None:
        if k > n_clusters:
            raise StructureError("assignment id out of range")
        k = n_clusters
    gene_counts = np.zeros((k, matrix.n_genes), dtype=np.int64)
    n_cells = np.zeros(k, dtype=np.int64)
    if len(matrix.data):
        per_entry_cluster = np.repeat(assignments, np.diff(matrix.indptr))
        np.add.at(gene_counts, (per_entry_cluster, matrix.indices), matrix.data)
    np.add.at(n_cells, assignments, 1)
    return [
        ClusterStats(int(n_cells[j]), gene_counts[j], int(gene_counts[j].sum()))
        for j in range(k)
    ]


def prune_empty_clusters(state: ModelState) -> ModelState:
    """Drop clusters with no members and compact ids to 0..K-1.

    Surviving weights (including the unopened-cluster slot) are
    renormalized to sum to 1. Runs at iteration boundaries so a parallel
    sweep always sees a frozen cluster set.
    """
    sizes = state.cluster_sizes()
    if np.all(sizes > 0):
        return state
    keep = np.nonzero(sizes > 0)[0]
    remap = -np.ones(state.k, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    new_weights = np.concatenate([state.weights[keep], state.weights[-1:]])
    new_weights /= new_weights.sum()
    return ModelState(
        assignments=remap[state.assignments],
        weights=new_weights,
        log_theta=state.log_theta[keep],
        stats=[state.stats[j] for j in keep],
    )
