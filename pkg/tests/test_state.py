import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from umiclust.state import (
    ClusterStats,
    CountMatrix,
    Hyperparams,
    ModelState,
    Partition,
    StructureError,
    prune_empty_clusters,
    recompute_stats,
)

from .conftest import random_count_matrix


class TestCountMatrix:
    def test_from_cells_round_trip(self, tiny_matrix):
        idx, cnt = tiny_matrix.cell(0)
        assert list(idx) == [0, 2] and list(cnt) == [2, 1]
        idx, cnt = tiny_matrix.cell(2)
        assert len(idx) == 0

    def test_cell_totals_allows_empty_cell(self, tiny_matrix):
        assert list(tiny_matrix.cell_totals()) == [3, 3, 0, 3]

    def test_gene_totals(self, tiny_matrix):
        assert list(tiny_matrix.gene_totals()) == [3, 4, 2]

    def test_dense_round_trip(self, tiny_matrix):
        again = CountMatrix.from_dense(tiny_matrix.to_dense())
        assert np.array_equal(again.indptr, tiny_matrix.indptr)
        assert np.array_equal(again.indices, tiny_matrix.indices)
        assert np.array_equal(again.data, tiny_matrix.data)

    def test_rejects_zero_counts(self):
        with pytest.raises(StructureError):
            CountMatrix.from_cells(2, [[(0, 0)]])

    def test_rejects_out_of_range_gene(self):
        with pytest.raises(StructureError):
            CountMatrix.from_cells(2, [[(2, 1)]])

    def test_rejects_duplicate_gene_in_cell(self):
        m = CountMatrix(
            n_genes=2,
            n_cells=1,
            indptr=np.array([0, 2]),
            indices=np.array([1, 1]),
            data=np.array([1, 1]),
        )
        with pytest.raises(StructureError):
            m.validate()


class TestClusterStats:
    def test_add_remove_round_trip(self):
        s = ClusterStats.empty(3)
        idx = np.array([0, 2])
        cnt = np.array([2, 1])
        s.add_cell(idx, cnt)
        assert s.n_cells == 1 and s.total_umi == 3
        s.remove_cell(idx, cnt)
        assert s.n_cells == 0 and s.total_umi == 0
        assert np.all(s.gene_counts == 0)

    def test_validate_catches_total_mismatch(self):
        s = ClusterStats(1, np.array([1, 0]), 5)
        with pytest.raises(StructureError):
            s.validate()


class TestRecomputeStats:
    def test_two_cells_one_cluster(self):
        m = CountMatrix.from_cells(2, [[(0, 2)], [(1, 1)]])
        stats = recompute_stats(m, np.array([0, 0]))
        assert stats[0].n_cells == 2
        assert list(stats[0].gene_counts) == [2, 1]
        assert stats[0].total_umi == 3

    def test_unreferenced_cluster_absent(self):
        m = CountMatrix.from_cells(2, [[(0, 1)], [(1, 1)], [(0, 1)]])
        stats = recompute_stats(m, np.array([0, 2, 0]))
        assert len(stats) == 3  # ids 0..2; id 1 present but empty
        assert stats[1].n_cells == 0
        stats = recompute_stats(m, np.array([0, 1, 0]))
        assert len(stats) == 2

    def test_out_of_range_assignment_rejected(self, tiny_matrix):
        with pytest.raises(StructureError):
            recompute_stats(tiny_matrix, np.array([0, 0, 0, 5]), n_clusters=3)

    def test_matches_incremental_bookkeeping(self):
        rng = np.random.default_rng(11)
        m = random_count_matrix(rng, n_cells=50, n_genes=10)
        assignments = rng.integers(0, 4, size=50)
        stats = recompute_stats(m, assignments, 4)
        for _ in range(100):
            cell = int(rng.integers(50))
            new = int(rng.integers(4))
            idx, cnt = m.cell(cell)
            stats[assignments[cell]].remove_cell(idx, cnt)
            stats[new].add_cell(idx, cnt)
            assignments[cell] = new
        fresh = recompute_stats(m, assignments, 4)
        for got, want in zip(stats, fresh):
            assert got.n_cells == want.n_cells
            assert got.total_umi == want.total_umi
            assert np.array_equal(got.gene_counts, want.gene_counts)

    def test_aggregation_closure(self):
        rng = np.random.default_rng(5)
        m = random_count_matrix(rng, n_cells=30, n_genes=6)
        assignments = rng.integers(0, 3, size=30)
        stats = recompute_stats(m, assignments, 3)
        total = sum(s.gene_counts for s in stats)
        assert np.array_equal(total, m.gene_totals())
        assert sum(s.n_cells for s in stats) == m.n_cells


def _state_with_sizes(matrix, sizes):
    assignments = np.repeat(np.arange(len(sizes)), sizes)
    k = len(sizes)
    stats = recompute_stats(matrix, assignments, k)
    v = matrix.n_genes
    log_theta = np.log(np.full((k, v), 1.0 / v))
    weights = np.full(k + 1, 1.0 / (k + 1))
    return ModelState(assignments, weights, log_theta, stats)


class TestPruneEmptyClusters:
    def test_removes_and_remaps(self):
        rng = np.random.default_rng(3)
        m = random_count_matrix(rng, n_cells=7, n_genes=4)
        state = _state_with_sizes(m, [5, 0, 2])
        # force the middle cluster empty: sizes [5, 0, 2] built directly
        state.assignments = np.array([0] * 5 + [2] * 2)
        state.stats = recompute_stats(m, state.assignments, 3)
        pruned = prune_empty_clusters(state)
        assert pruned.k == 2
        assert set(pruned.assignments.tolist()) == {0, 1}
        assert pruned.assignments[5] == 1  # old id 2 remapped to 1
        assert abs(pruned.weights.sum() - 1.0) < 1e-12

    def test_identity_when_no_empties(self):
        rng = np.random.default_rng(4)
        m = random_count_matrix(rng, n_cells=6, n_genes=4)
        state = _state_with_sizes(m, [3, 3])
        pruned = prune_empty_clusters(state)
        assert pruned is state

    def test_stats_agree_after_pruning(self):
        rng = np.random.default_rng(9)
        for trial in range(5):
            m = random_count_matrix(rng, n_cells=20, n_genes=5)
            assignments = rng.integers(0, 6, size=20)
            stats = recompute_stats(m, assignments, 6)
            k = 6
            state = ModelState(
                assignments,
                np.full(k + 1, 1.0 / (k + 1)),
                np.log(np.full((k, m.n_genes), 1.0 / m.n_genes)),
                stats,
            )
            pruned = prune_empty_clusters(state)
            fresh = recompute_stats(m, pruned.assignments, pruned.k)
            for got, want in zip(pruned.stats, fresh):
                assert got.n_cells == want.n_cells
                assert np.array_equal(got.gene_counts, want.gene_counts)


class TestModelStateValidate:
    def test_accepts_coherent_state(self, tiny_matrix):
        state = _state_with_sizes(tiny_matrix, [2, 2])
        state.validate(tiny_matrix)

    def test_rejects_bad_weights(self, tiny_matrix):
        state = _state_with_sizes(tiny_matrix, [2, 2])
        state.weights = np.array([0.5, 0.5, 0.5])
        with pytest.raises(StructureError):
            state.validate()

    def test_rejects_stale_stats(self, tiny_matrix):
        state = _state_with_sizes(tiny_matrix, [2, 2])
        state.stats[0].gene_counts[0] += 1
        state.stats[0].total_umi += 1
        with pytest.raises(StructureError):
            state.validate(tiny_matrix)


class TestHyperparams:
    @pytest.mark.parametrize("kw", [{"alpha": 0.0}, {"lam": -1.0}, {"lam_bar": 0.0}])
    def test_rejects_nonpositive(self, kw):
        with pytest.raises(StructureError):
            Hyperparams(**kw)


class TestPartition:
    def test_rejects_negative_labels(self):
        with pytest.raises(StructureError):
            Partition(np.array([0, -1]))

    @given(st.lists(st.integers(0, 5), min_size=1, max_size=30))
    @settings(max_examples=50, deadline=None)
    def test_accepts_any_nonnegative_labels(self, labels):
        assert len(Partition(np.array(labels))) == len(labels)
