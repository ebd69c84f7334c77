"""Ingestion, gene selection, depth downsampling, and result output.

Supported inputs:

- Matrix Market coordinate files (``%%MatrixMarket matrix coordinate
  integer general``), rows indexing genes unless ``transpose``. Indices
  are 1-based on disk and 0-based in memory.
- A 10x-style directory holding ``matrix.mtx`` plus optional
  ``genes.tsv`` / ``barcodes.tsv`` name files.
- Dense CSV with a header row of cell names and a leading column of gene
  names.

Outputs: a two-column labels CSV and a JSON run report. Both are
byte-stable given identical inputs.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .rng import Streams
from .state import CountMatrix, Partition
from .sampler import RunReport

__all__ = [
    "IngestOptions",
    "MatrixFormatError",
    "read_matrix",
    "read_mtx",
    "read_tenx_dir",
    "read_csv",
    "write_mtx",
    "write_csv",
    "select_top_variable_genes",
    "downsample_depth",
    "write_labels",
    "read_labels",
    "write_report",
]

_MTX_HEADER = "%%matrixmarket matrix coordinate integer general"


class MatrixFormatError(ValueError):
    """Malformed input file; the message names the offending line."""


@dataclass(frozen=True)
class IngestOptions:
    format: str = "mtx"  # "mtx" | "tenx_dir" | "csv"
    top_k_genes: int | None = None
    transpose: bool = False


def read_matrix(path: str, options: IngestOptions | None = None) -> CountMatrix:
    """Read a count matrix in any supported format, then optionally keep
    only the most variable genes."""
    options = options or IngestOptions()
    if options.format == "mtx":
        m = read_mtx(path, transpose=options.transpose)
    elif options.format == "tenx_dir":
        m = read_tenx_dir(path, transpose=options.transpose)
    elif options.format == "csv":
        m = read_csv(path, transpose=options.transpose)
    else:
        raise MatrixFormatError(f"unknown format {options.format!r}")
    if options.top_k_genes is not None:
        m = select_top_variable_genes(m, options.top_k_genes)
    return m


def _triplets_to_matrix(
    n_genes: int,
    n_cells: int,
    genes: np.ndarray,
    cells: np.ndarray,
    counts: np.ndarray,
    source: str = "<input>",
) -> CountMatrix:
    order = np.lexsort((genes, cells))
    genes, cells, counts = genes[order], cells[order], counts[order]
    dup = np.zeros(len(genes), dtype=bool)
    if len(genes) > 1:
        dup[1:] = (genes[1:] == genes[:-1]) & (cells[1:] == cells[:-1])
    if dup.any():
        warnings.warn(
            f"{source}: {int(dup.sum())} duplicate (gene, cell) entries summed",
            stacklevel=3,
        )
        keys = cells.astype(np.int64) * n_genes + genes
        uniq, inv = np.unique(keys, return_inverse=True)
        summed = np.zeros(len(uniq), dtype=np.int64)
        np.add.at(summed, inv, counts)
        cells = (uniq // n_genes).astype(np.int64)
        genes = (uniq % n_genes).astype(np.int64)
        counts = summed
    indptr = np.zeros(n_cells + 1, dtype=np.int64)
    np.add.at(indptr, cells + 1, 1)
    np.cumsum(indptr, out=indptr)
    m = CountMatrix(
        n_genes=n_genes,
        n_cells=n_cells,
        indptr=indptr,
        indices=genes.astype(np.int32),
        data=counts.astype(np.int64),
    )
    m.validate()
    return m


def read_mtx(path: str, transpose: bool = False) -> CountMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.lower().startswith(_MTX_HEADER):
            raise MatrixFormatError(
                f"{path}: line 1: expected header "
                f"'%%MatrixMarket matrix coordinate integer general'"
            )
        lineno = 1
        dims = None
        rows_l, cols_l, vals_l = [], [], []
        for line in fh:
            lineno += 1
            s = line.strip()
            if not s or s.startswith("%"):
                continue
            parts = s.split()
            if dims is None:
                if len(parts) != 3:
                    raise MatrixFormatError(f"{path}: line {lineno}: expected 3 size fields")
                try:
                    dims = tuple(int(p) for p in parts)
                except ValueError:
                    raise MatrixFormatError(
                        f"{path}: line {lineno}: non-integer size entry"
                    ) from None
                continue
            if len(parts) != 3:
                raise MatrixFormatError(f"{path}: line {lineno}: expected 3 fields")
            try:
                r, c, v = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError:
                raise MatrixFormatError(
                    f"{path}: line {lineno}: non-integer entry"
                ) from None
            if v < 0:
                raise MatrixFormatError(f"{path}: line {lineno}: negative count {v}")
            if not (1 <= r <= dims[0] and 1 <= c <= dims[1]):
                raise MatrixFormatError(f"{path}: line {lineno}: index out of range")
            if v == 0:
                continue  # explicit zeros are never stored
            rows_l.append(r - 1)
            cols_l.append(c - 1)
            vals_l.append(v)
    if dims is None:
        raise MatrixFormatError(f"{path}: missing size line")
    rows = np.asarray(rows_l, dtype=np.int64)
    cols = np.asarray(cols_l, dtype=np.int64)
    vals = np.asarray(vals_l, dtype=np.int64)
    if transpose:
        rows, cols = cols, rows
        n_genes, n_cells = dims[1], dims[0]
    else:
        n_genes, n_cells = dims[0], dims[1]
    return _triplets_to_matrix(n_genes, n_cells, rows, cols, vals, source=path)


def read_tenx_dir(path: str, transpose: bool = False) -> CountMatrix:
    mtx_path = os.path.join(path, "matrix.mtx")
    if not os.path.exists(mtx_path):
        raise MatrixFormatError(f"{path}: no matrix.mtx in directory")
    gene_names = cell_names = None
    genes_path = os.path.join(path, "genes.tsv")
    if os.path.exists(genes_path):
        with open(genes_path, "r", encoding="utf-8") as fh:
            rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
        gene_names = [r[1] if len(r) > 1 else r[0] for r in rows]
    barcodes_path = os.path.join(path, "barcodes.tsv")
    if os.path.exists(barcodes_path):
        with open(barcodes_path, "r", encoding="utf-8") as fh:
            cell_names = [line.strip() for line in fh if line.strip()]
    m = read_mtx(mtx_path, transpose=transpose)
    if gene_names is not None:
        if len(gene_names) != m.n_genes:
            raise MatrixFormatError(
                f"{genes_path}: {len(gene_names)} names for {m.n_genes} genes"
            )
        m.gene_names = gene_names
    if cell_names is not None:
        if len(cell_names) != m.n_cells:
            raise MatrixFormatError(
                f"{barcodes_path}: {len(cell_names)} names for {m.n_cells} cells"
            )
        m.cell_names = cell_names
    return m


def read_csv(path: str, transpose: bool = False) -> CountMatrix:
    """Dense labeled grid: header row of cell names, first column gene names."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if not header:
            raise MatrixFormatError(f"{path}: line 1: empty header")
        col_names = header.split(",")[1:]
        row_names: list[str] = []
        values: list[list[int]] = []
        lineno = 1
        for line in fh:
            lineno += 1
            s = line.rstrip("\n")
            if not s:
                continue
            parts = s.split(",")
            if len(parts) != len(col_names) + 1:
                raise MatrixFormatError(
                    f"{path}: line {lineno}: expected {len(col_names) + 1} fields, got {len(parts)}"
                )
            row_names.append(parts[0])
            try:
                row = [int(p) for p in parts[1:]]
            except ValueError:
                raise MatrixFormatError(
                    f"{path}: line {lineno}: non-integer entry"
                ) from None
            if any(v < 0 for v in row):
                raise MatrixFormatError(f"{path}: line {lineno}: negative count")
            values.append(row)
    dense = np.asarray(values, dtype=np.int64).reshape(len(values), len(col_names))
    if transpose:
        dense = dense.T
        row_names, col_names = col_names, row_names
    return CountMatrix.from_dense(dense, gene_names=row_names, cell_names=col_names)


def write_mtx(path: str, matrix: CountMatrix) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("%%MatrixMarket matrix coordinate integer general\n")
        fh.write(f"{matrix.n_genes} {matrix.n_cells} {len(matrix.data)}\n")
        for i in range(matrix.n_cells):
            idx, cnt = matrix.cell(i)
            for g, v in zip(idx, cnt):
                fh.write(f"{g + 1} {i + 1} {v}\n")


def write_csv(path: str, matrix: CountMatrix) -> None:
    gene_names = matrix.gene_names or [f"g{j}" for j in range(matrix.n_genes)]
    cell_names = matrix.cell_names or [f"c{i}" for i in range(matrix.n_cells)]
    dense = matrix.to_dense()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("gene," + ",".join(cell_names) + "\n")
        for j in range(matrix.n_genes):
            fh.write(gene_names[j] + "," + ",".join(str(int(v)) for v in dense[j]) + "\n")


def select_top_variable_genes(matrix: CountMatrix, k: int) -> CountMatrix:
    """Keep the k genes with the largest population standard deviation of
    raw counts across cells (implicit zeros included). Ties prefer the
    lower gene index. Retained cells' counts are preserved exactly."""
    if not 1 <= k <= matrix.n_genes:
        raise ValueError(f"top_k_genes must be in [1, {matrix.n_genes}], got {k}")
    n = matrix.n_cells
    if n == 0:
        raise ValueError("cannot rank genes with no cells")
    s1 = np.zeros(matrix.n_genes, dtype=np.float64)
    s2 = np.zeros(matrix.n_genes, dtype=np.float64)
    np.add.at(s1, matrix.indices, matrix.data.astype(np.float64))
    np.add.at(s2, matrix.indices, matrix.data.astype(np.float64) ** 2)
    var = s2 / n - (s1 / n) ** 2
    order = np.lexsort((np.arange(matrix.n_genes), -var))
    keep = np.sort(order[:k])
    remap = -np.ones(matrix.n_genes, dtype=np.int64)
    remap[keep] = np.arange(k)
    mask = remap[matrix.indices] >= 0
    new_indices = remap[matrix.indices[mask]].astype(np.int32)
    new_data = matrix.data[mask]
    kept_per_cell = np.zeros(matrix.n_cells, dtype=np.int64)
    cell_of_entry = np.repeat(np.arange(matrix.n_cells), np.diff(matrix.indptr))
    np.add.at(kept_per_cell, cell_of_entry[mask], 1)
    indptr = np.zeros(matrix.n_cells + 1, dtype=np.int64)
    np.cumsum(kept_per_cell, out=indptr[1:])
    names = [matrix.gene_names[j] for j in keep] if matrix.gene_names else None
    out = CountMatrix(
        n_genes=k,
        n_cells=matrix.n_cells,
        indptr=indptr,
        indices=new_indices,
        data=new_data,
        gene_names=names,
        cell_names=matrix.cell_names,
    )
    out.validate()
    return out


def downsample_depth(matrix: CountMatrix, target_reads_per_cell: int, seed: int) -> CountMatrix:
    """Binomial thinning toward a target sequencing depth.

    Cells with total UMI above the target keep each unit independently
    with probability target/total; cells at or below the target are
    untouched. Each cell thins from its own stream, so the result is
    deterministic under the seed.
    """
    if target_reads_per_cell <= 0:
        raise ValueError("target reads per cell must be positive")
    streams = Streams(seed)
    totals = matrix.cell_totals()
    cells = []
    for i in range(matrix.n_cells):
        idx, cnt = matrix.cell(i)
        t = int(totals[i])
        if t <= target_reads_per_cell:
            cells.append(list(zip(idx.tolist(), cnt.tolist())))
            continue
        p = target_reads_per_cell / t
        kept = streams.get(rngmod.DOWNSAMPLE, index=i).binomial(cnt, p)
        nz = kept.nonzero()[0]
        cells.append([(int(idx[j]), int(kept[j])) for j in nz])
    return CountMatrix.from_cells(
        matrix.n_genes, cells, gene_names=matrix.gene_names, cell_names=matrix.cell_names
    )


def write_labels(path: str, labels, cell_names: list[str] | None = None) -> None:
    """Two-column CSV: cell name (or index) and cluster id."""
    arr = labels.labels if isinstance(labels, Partition) else np.asarray(labels)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("cell,cluster\n")
        for i, lab in enumerate(arr):
            name = cell_names[i] if cell_names else str(i)
            fh.write(f"{name},{int(lab)}\n")


def read_labels(path: str) -> Partition:
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.lower().startswith("cell,"):
            raise MatrixFormatError(f"{path}: line 1: expected 'cell,cluster' header")
        for lineno, line in enumerate(fh, start=2):
            s = line.strip()
            if not s:
                continue
            parts = s.split(",")
            if len(parts) != 2:
                raise MatrixFormatError(f"{path}: line {lineno}: expected 2 fields")
            try:
                labels.append(int(parts[1]))
            except ValueError:
                raise MatrixFormatError(
                    f"{path}: line {lineno}: non-integer cluster id"
                ) from None
    return Partition(np.asarray(labels, dtype=np.int64))


def write_report(path: str, report: RunReport, labels_path: str | None = None) -> None:
    """Structured JSON run report; byte-stable for identical reports."""
    doc = report.to_json_dict()
    doc["labels_path"] = labels_path
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
