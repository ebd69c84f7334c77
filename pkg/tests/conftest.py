import numpy as np
import pytest

from umiclust.state import CountMatrix, Hyperparams


@pytest.fixture
def tiny_matrix() -> CountMatrix:
    # 3 genes x 4 cells, one empty cell
    return CountMatrix.from_cells(
        3,
        [
            [(0, 2), (2, 1)],
            [(1, 3)],
            [],
            [(0, 1), (1, 1), (2, 1)],
        ],
    )


@pytest.fixture
def hp() -> Hyperparams:
    return Hyperparams(alpha=0.5, lam=1.0, lam_bar=1.0)


def random_count_matrix(rng: np.random.Generator, n_cells: int, n_genes: int, max_total: int = 6):
    cells = []
    for _ in range(n_cells):
        total = int(rng.integers(0, max_total + 1))
        counts = rng.multinomial(total, np.ones(n_genes) / n_genes)
        nz = counts.nonzero()[0]
        cells.append([(int(g), int(counts[g])) for g in nz])
    return CountMatrix.from_cells(n_genes, cells)
