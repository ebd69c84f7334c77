import json
import math

import numpy as np
import pytest

from umiclust.dataio import (
    IngestOptions,
    MatrixFormatError,
    downsample_depth,
    read_csv,
    read_labels,
    read_matrix,
    read_mtx,
    read_tenx_dir,
    select_top_variable_genes,
    write_csv,
    write_labels,
    write_mtx,
    write_report,
)
from umiclust.sampler import RunReport, SamplerConfig, run
from umiclust.state import CountMatrix, Hyperparams

from .conftest import random_count_matrix
from .oracles import population_sd_per_gene


def write_text(path, text):
    path.write_text(text, encoding="utf-8")


MTX_HEADER = "%%MatrixMarket matrix coordinate integer general\n"


class TestReadMtx:
    def test_basic_parse(self, tmp_path):
        p = tmp_path / "m.mtx"
        write_text(p, MTX_HEADER + "3 2 2\n1 1 2\n3 2 1\n")
        m = read_mtx(str(p))
        assert (m.n_genes, m.n_cells) == (3, 2)
        idx, cnt = m.cell(0)
        assert list(idx) == [0] and list(cnt) == [2]
        idx, cnt = m.cell(1)
        assert list(idx) == [2] and list(cnt) == [1]

    def test_comment_lines_skipped(self, tmp_path):
        p = tmp_path / "m.mtx"
        write_text(p, MTX_HEADER + "% a comment\n2 2 1\n1 1 4\n")
        assert read_mtx(str(p)).gene_totals().tolist() == [4, 0]

    def test_transpose(self, tmp_path):
        p = tmp_path / "m.mtx"
        write_text(p, MTX_HEADER + "2 3 2\n1 1 2\n2 3 1\n")
        m = read_mtx(str(p), transpose=True)
        assert (m.n_genes, m.n_cells) == (3, 2)

    def test_wrong_header(self, tmp_path):
        p = tmp_path / "m.mtx"
        write_text(p, "%%MatrixMarket matrix coordinate real general\n1 1 1\n1 1 1.5\n")
        with pytest.raises(MatrixFormatError, match="line 1"):
            read_mtx(str(p))

    def test_non_integer_entry_names_line(self, tmp_path):
        p = tmp_path / "m.mtx"
        write_text(p, MTX_HEADER + "2 2 1\n1 1 2.5\n")
        with pytest.raises(MatrixFormatError, match="line 3"):
            read_mtx(str(p))

    def test_negative_count_rejected(self, tmp_path):
        p = tmp_path / "m.mtx"
        write_text(p, MTX_HEADER + "2 2 1\n1 1 -3\n")
        with pytest.raises(MatrixFormatError, match="negative"):
            read_mtx(str(p))

    def test_duplicates_summed_with_warning(self, tmp_path):
        p = tmp_path / "m.mtx"
        write_text(p, MTX_HEADER + "2 2 3\n1 1 2\n1 1 3\n2 2 1\n")
        with pytest.warns(UserWarning, match="duplicate"):
            m = read_mtx(str(p))
        idx, cnt = m.cell(0)
        assert list(idx) == [0] and list(cnt) == [5]

    def test_explicit_zero_not_stored(self, tmp_path):
        p = tmp_path / "m.mtx"
        write_text(p, MTX_HEADER + "2 2 2\n1 1 0\n2 1 3\n")
        m = read_mtx(str(p))
        idx, cnt = m.cell(0)
        assert list(idx) == [1] and list(cnt) == [3]

    def test_index_out_of_range(self, tmp_path):
        p = tmp_path / "m.mtx"
        write_text(p, MTX_HEADER + "2 2 1\n3 1 1\n")
        with pytest.raises(MatrixFormatError, match="out of range"):
            read_mtx(str(p))

    def test_missing_size_line(self, tmp_path):
        p = tmp_path / "m.mtx"
        write_text(p, MTX_HEADER)
        with pytest.raises(MatrixFormatError, match="size"):
            read_mtx(str(p))

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        m = random_count_matrix(rng, n_cells=12, n_genes=7)
        p = tmp_path / "rt.mtx"
        write_mtx(str(p), m)
        again = read_mtx(str(p))
        assert np.array_equal(again.indptr, m.indptr)
        assert np.array_equal(again.indices, m.indices)
        assert np.array_equal(again.data, m.data)


class TestReadTenxDir:
    def _write_fixture(self, d):
        # 5 genes x 4 cells, 7 stored entries; column totals 3, 5, 0, 9
        write_text(
            d / "matrix.mtx",
            MTX_HEADER
            + "5 4 7\n"
            + "1 1 2\n3 1 1\n"
            + "2 2 5\n"
            + "1 4 3\n4 4 2\n5 4 1\n2 4 3\n",
        )
        write_text(d / "genes.tsv", "ENSG1\tGeneA\nENSG2\tGeneB\nENSG3\tGeneC\nENSG4\tGeneD\nENSG5\tGeneE\n")
        write_text(d / "barcodes.tsv", "AAAC\nAAAG\nAAAT\nAACA\n")

    def test_fixture_totals(self, tmp_path):
        self._write_fixture(tmp_path)
        m = read_tenx_dir(str(tmp_path))
        assert (m.n_genes, m.n_cells) == (5, 4)
        assert m.cell_totals().tolist() == [3, 5, 0, 9]
        assert m.gene_totals().tolist() == [5, 8, 1, 2, 1]
        assert m.gene_names == ["GeneA", "GeneB", "GeneC", "GeneD", "GeneE"]
        assert m.cell_names == ["AAAC", "AAAG", "AAAT", "AACA"]

    def test_names_optional(self, tmp_path):
        write_text(tmp_path / "matrix.mtx", MTX_HEADER + "2 2 1\n1 1 1\n")
        m = read_tenx_dir(str(tmp_path))
        assert m.gene_names is None and m.cell_names is None

    def test_missing_matrix(self, tmp_path):
        with pytest.raises(MatrixFormatError, match="matrix.mtx"):
            read_tenx_dir(str(tmp_path))

    def test_name_count_mismatch(self, tmp_path):
        write_text(tmp_path / "matrix.mtx", MTX_HEADER + "2 2 1\n1 1 1\n")
        write_text(tmp_path / "genes.tsv", "ENSG1\tA\n")
        with pytest.raises(MatrixFormatError, match="names"):
            read_tenx_dir(str(tmp_path))


class TestCsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        m = random_count_matrix(rng, n_cells=6, n_genes=4)
        p = tmp_path / "m.csv"
        write_csv(str(p), m)
        again = read_csv(str(p))
        assert np.array_equal(again.to_dense(), m.to_dense())
        assert again.gene_names == [f"g{j}" for j in range(4)]

    def test_non_integer_entry(self, tmp_path):
        p = tmp_path / "m.csv"
        write_text(p, "gene,c0,c1\ng0,1,x\n")
        with pytest.raises(MatrixFormatError, match="line 2"):
            read_csv(str(p))

    def test_ragged_row(self, tmp_path):
        p = tmp_path / "m.csv"
        write_text(p, "gene,c0,c1\ng0,1\n")
        with pytest.raises(MatrixFormatError, match="expected 3 fields"):
            read_csv(str(p))

    def test_negative_rejected(self, tmp_path):
        p = tmp_path / "m.csv"
        write_text(p, "gene,c0\ng0,-1\n")
        with pytest.raises(MatrixFormatError, match="negative"):
            read_csv(str(p))


class TestReadMatrixDispatch:
    def test_unknown_format(self, tmp_path):
        with pytest.raises(MatrixFormatError, match="unknown format"):
            read_matrix(str(tmp_path / "x"), IngestOptions(format="hdf5"))

    def test_top_genes_applied(self, tmp_path):
        p = tmp_path / "m.csv"
        write_text(p, "gene,c0,c1\ng0,5,0\ng1,1,1\ng2,9,1\n")
        m = read_matrix(str(p), IngestOptions(format="csv", top_k_genes=2))
        assert m.n_genes == 2
        assert m.gene_names == ["g0", "g2"]


class TestSelectTopVariableGenes:
    def test_constant_gene_dropped_first(self):
        dense = np.array(
            [
                [3, 3, 3, 3],  # constant: sd 0
                [0, 4, 0, 4],  # high sd
                [1, 2, 1, 2],  # mid sd
            ]
        )
        m = CountMatrix.from_dense(dense, gene_names=["const", "high", "mid"])
        out = select_top_variable_genes(m, 2)
        assert out.gene_names == ["high", "mid"]

    def test_identity_when_k_equals_v(self, tiny_matrix):
        out = select_top_variable_genes(tiny_matrix, tiny_matrix.n_genes)
        assert np.array_equal(out.to_dense(), tiny_matrix.to_dense())

    def test_matches_independent_sd_ranking(self):
        rng = np.random.default_rng(3)
        dense = rng.integers(0, 6, size=(6, 30))
        m = CountMatrix.from_dense(dense)
        out = select_top_variable_genes(m, 3)
        sd = population_sd_per_gene(dense)
        want = np.sort(np.lexsort((np.arange(6), -sd))[:3])
        assert np.array_equal(out.to_dense(), dense[want])

    def test_tie_prefers_lower_index(self):
        dense = np.array([[0, 2], [0, 2], [1, 1]])  # genes 0 and 1 tie
        m = CountMatrix.from_dense(dense)
        out = select_top_variable_genes(m, 1)
        assert np.array_equal(out.to_dense(), dense[[0]])

    def test_counts_preserved_exactly(self):
        rng = np.random.default_rng(4)
        dense = rng.integers(0, 5, size=(8, 20))
        m = CountMatrix.from_dense(dense)
        out = select_top_variable_genes(m, 5)
        sd = population_sd_per_gene(dense)
        keep = np.sort(np.lexsort((np.arange(8), -sd))[:5])
        assert np.array_equal(out.to_dense(), dense[keep])

    @pytest.mark.parametrize("k", [0, 99])
    def test_k_out_of_range(self, tiny_matrix, k):
        with pytest.raises(ValueError):
            select_top_variable_genes(tiny_matrix, k)


class TestDownsampleDepth:
    def test_identity_when_under_target(self, tiny_matrix):
        out = downsample_depth(tiny_matrix, 1000, seed=1)
        assert np.array_equal(out.to_dense(), tiny_matrix.to_dense())

    def test_binomial_mean(self):
        m = CountMatrix.from_cells(1, [[(0, 1000)]])
        kept = []
        for seed in range(1000):
            out = downsample_depth(m, 100, seed=seed)
            kept.append(int(out.gene_totals()[0]))
        # Binomial(1000, 0.1): mean 100, sd sqrt(90)
        se = math.sqrt(1000 * 0.1 * 0.9 / 1000)
        assert abs(np.mean(kept) - 100.0) < 3 * se

    def test_never_increases_counts(self):
        rng = np.random.default_rng(5)
        m = random_count_matrix(rng, n_cells=30, n_genes=8, max_total=40)
        out = downsample_depth(m, 10, seed=3)
        assert np.all(out.to_dense() <= m.to_dense())

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(6)
        m = random_count_matrix(rng, n_cells=20, n_genes=6, max_total=50)
        a = downsample_depth(m, 12, seed=9)
        b = downsample_depth(m, 12, seed=9)
        assert np.array_equal(a.to_dense(), b.to_dense())

    def test_rejects_nonpositive_target(self, tiny_matrix):
        with pytest.raises(ValueError):
            downsample_depth(tiny_matrix, 0, seed=0)


class TestLabelsAndReport:
    def test_labels_round_trip(self, tmp_path):
        p = tmp_path / "labels.csv"
        labels = np.array([0, 2, 1, 2])
        write_labels(str(p), labels)
        assert np.array_equal(read_labels(str(p)).labels, labels)

    def test_labels_with_names(self, tmp_path):
        p = tmp_path / "labels.csv"
        write_labels(str(p), np.array([0, 1]), cell_names=["a", "b"])
        text = p.read_text()
        assert text.splitlines()[1] == "a,0"

    def test_bad_label_file(self, tmp_path):
        p = tmp_path / "labels.csv"
        p.write_text("cell,cluster\n0,x\n")
        with pytest.raises(MatrixFormatError, match="line 2"):
            read_labels(str(p))

    def _tiny_report(self, matrix) -> RunReport:
        return run(
            matrix,
            SamplerConfig(hp=Hyperparams(), n_iterations=3, burn_in=0, seed=1),
        )

    def test_report_schema(self, tmp_path, tiny_matrix):
        report = self._tiny_report(tiny_matrix)
        p = tmp_path / "report.json"
        write_report(str(p), report, labels_path="labels.csv")
        doc = json.loads(p.read_text())
        assert set(doc) == {
            "config", "seed", "final_k", "map_iteration", "wall_ms",
            "labels", "trace", "labels_path",
        }
        assert len(doc["trace"]) == 3
        assert set(doc["trace"][0]) == {
            "iteration", "k", "log_joint", "split_proposed", "split_accepted",
            "merge_proposed", "merge_accepted", "wall_ms",
        }
        assert set(doc["wall_ms"]) == {"init", "sweep", "resample", "moves", "total"}

    def test_empty_trace_report_is_valid(self, tmp_path, tiny_matrix):
        report = self._tiny_report(tiny_matrix)
        report.trace = []
        p = tmp_path / "report.json"
        write_report(str(p), report)
        doc = json.loads(p.read_text())
        assert doc["trace"] == []

    def test_report_byte_stable(self, tmp_path, tiny_matrix):
        report = self._tiny_report(tiny_matrix)
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        write_report(str(p1), report, labels_path="x.csv")
        write_report(str(p2), report, labels_path="x.csv")
        assert p1.read_bytes() == p2.read_bytes()
