"""umiclust: nonparametric Bayesian clustering of UMI count matrices.

A Dirichlet-process mixture of multinomials inferred by parallel
split-merge MCMC, with ingestion for common count-matrix formats,
synthetic data generation, partition comparison metrics, and a
thread-scaling benchmark harness.
"""

from .state import (
    ClusterStats,
    CountMatrix,
    Hyperparams,
    ModelState,
    Partition,
    SubclusterState,
    prune_empty_clusters,
    recompute_stats,
)
from .sampler import RunReport, SamplerConfig, run
from .metrics import (
    PairCounts,
    adjusted_rand_index,
    coassignment_stability,
    huberts_index,
    pair_counts,
    rand_index,
)
from .dataio import IngestOptions, downsample_depth, read_matrix, select_top_variable_genes
from .synthgen import SynthSpec, generate

__version__ = "0.1.0"

__all__ = [
    "CountMatrix",
    "Hyperparams",
    "ClusterStats",
    "ModelState",
    "SubclusterState",
    "Partition",
    "recompute_stats",
    "prune_empty_clusters",
    "SamplerConfig",
    "RunReport",
    "run",
    "PairCounts",
    "pair_counts",
    "rand_index",
    "adjusted_rand_index",
    "huberts_index",
    "coassignment_stability",
    "IngestOptions",
    "read_matrix",
    "select_top_variable_genes",
    "downsample_depth",
    "SynthSpec",
    "generate",
    "__version__",
]
