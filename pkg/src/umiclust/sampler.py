"""Split-merge MCMC engine for the Dirichlet-multinomial mixture.

One iteration is: a data-parallel assignment sweep over the live clusters,
conjugate resampling of profiles and mixing weights, then a sequence of
move slots, each a fair coin flip between a split proposal (built by
local two-sided Gibbs inside one cluster) and a merge proposal, accepted
or rejected by Metropolis-Hastings. New clusters are born only from
accepted splits; clusters die only through accepted merges.

Exactness notes, validated against enumerated posteriors at desk scale:

- The sweep proposes every cell's assignment independently over the K
  live clusters and installs the result only if no cluster was emptied.
  The proposal density matches the target restricted to
  occupancy-preserving label vectors, so this is an exact Gibbs update on
  that support; label vectors that kill a cluster belong to the merge
  moves instead.
- Transition probabilities count everything a proposal actually draws:
  the member-side conditionals of the final local scan, the Dirichlet
  densities of freshly drawn profiles, the Beta density (with its
  change-of-variables factor) of the weight apportionment, and the
  probability of selecting the move target. A Beta(n0, n1) fraction is
  the exact conditional of the child weights given their sum, and with
  the profile densities included the acceptance ratio reduces to the
  collapsed form, so moves stay calibrated even at tens of thousands of
  genes.
- The driver's merge moves are scored against the same local-Gibbs
  mechanism the splits use: a dry launch on the merged members evaluates
  the probability that mechanism would regenerate the current pair, which
  makes split and merge flows cancel exactly. The closed-form
  random-split merge ratio remains available as propose_merge_random.
- The local scans anchor the lowest member to side 0 and one random
  other member to side 1, so neither side can die mid-scan and every
  two-way outcome has exactly one labeling.

Reproducibility: all randomness flows through counter-based streams keyed
on (seed, purpose, iteration, move index), and the sweep merges integer
partials in block order, so a run's output is identical for any thread
count.
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .dmmath import (
    log_dirichlet_draw,
    log_dirichlet_pdf,
    log_joint,
    sample_mixing_weights,
    sample_theta_posterior,
)
from .kernels import assign_block, local_gibbs_eval, local_gibbs_sweep
from .rng import Streams
from .state import (
    ClusterStats,
    CountMatrix,
    Hyperparams,
    ModelState,
    StructureError,
    SubclusterState,
    prune_empty_clusters,
    recompute_stats,
)

__all__ = [
    "SamplerConfig",
    "MoveProposal",
    "IterationTrace",
    "RunReport",
    "ProposalImpossibleError",
    "SamplerError",
    "init_state",
    "sample_assignments_parallel",
    "resample_cluster_params",
    "local_gibbs_subclusters",
    "propose_split",
    "split_log_state_ratio",
    "propose_merge_random",
    "propose_merge_gibbs",
    "random_split_transition_log",
    "mh_accept",
    "step",
    "run",
]


class ProposalImpossibleError(ValueError):
    """The requested move cannot be formed (e.g. splitting a singleton)."""


class SamplerError(RuntimeError):
    """Internal sampler failure that should never occur on valid state."""


@dataclass
class SamplerConfig:
    hp: Hyperparams = field(default_factory=Hyperparams)
    n_iterations: int = 100
    local_gibbs_iters: int = 1
    split_moves_per_iter: int = 1
    merge_moves_per_iter: int = 1
    k_init: int = 1
    seed: int = 0
    n_threads: int = 1
    burn_in: int = 0
    estimator: str = "map"  # "map" or "last"

    def validate(self) -> None:
        if self.n_iterations < 1 or self.k_init < 1 or self.local_gibbs_iters < 1:
            raise StructureError("iteration counts and k_init must be positive")
        if self.split_moves_per_iter < 0 or self.merge_moves_per_iter < 0:
            raise StructureError("move counts must be nonnegative")
        if not 0 <= self.burn_in < self.n_iterations:
            raise StructureError("burn_in must satisfy 0 <= burn_in < n_iterations")
        if self.n_threads < 1:
            raise StructureError("n_threads must be >= 1")
        if self.estimator not in ("map", "last"):
            raise StructureError("estimator must be 'map' or 'last'")


@dataclass
class MoveProposal:
    """A proposed split or merge with everything needed to score and apply it.

    log_state_ratio is log p(S*)/p(S) for the instantiated states;
    log_transition_forward/reverse are log q(S*|S) and log q(S|S*)
    including target selection and the densities of drawn profiles.
    """

    kind: str  # "split" | "merge"
    source: tuple[int, ...]
    members: np.ndarray | None
    sub_assignments: np.ndarray | None
    weights: np.ndarray
    log_thetas: np.ndarray
    stats: tuple[ClusterStats, ...]
    log_transition_forward: float
    log_transition_reverse: float
    log_state_ratio: float


@dataclass
class IterationTrace:
    iteration: int
    k: int
    log_joint: float
    split_proposed: int
    split_accepted: int
    merge_proposed: int
    merge_accepted: int
    wall_ms: float
    sweep_ms: float = 0.0
    resample_ms: float = 0.0
    moves_ms: float = 0.0


@dataclass
class RunReport:
    labels: np.ndarray
    labels_last: np.ndarray
    labels_map: np.ndarray
    map_iteration: int
    final_k: int
    trace: list[IterationTrace]
    config: dict
    wall_ms: dict
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "final_k": self.final_k,
            "map_iteration": self.map_iteration,
            "wall_ms": {k: round(v, 3) for k, v in self.wall_ms.items()},
            "labels": [int(x) for x in self.labels],
            "trace": [
                {
                    "iteration": t.iteration,
                    "k": t.k,
                    "log_joint": t.log_joint,
                    "split_proposed": t.split_proposed,
                    "split_accepted": t.split_accepted,
                    "merge_proposed": t.merge_proposed,
                    "merge_accepted": t.merge_accepted,
                    "wall_ms": round(t.wall_ms, 3),
                }
                for t in self.trace
            ],
        }


# Reused worker pools, one per thread count. Idle threads are cheap and
# joining them per sweep is not.
_POOLS: dict[int, ThreadPoolExecutor] = {}


def _pool(n_threads: int) -> ThreadPoolExecutor:
    pool = _POOLS.get(n_threads)
    if pool is None:
        pool = ThreadPoolExecutor(max_workers=n_threads)
        _POOLS[n_threads] = pool
    return pool


def init_state(matrix: CountMatrix, config: SamplerConfig, streams: Streams) -> ModelState:
    """Uniform random assignment to k_init clusters, then conjugate draws."""
    if config.k_init > matrix.n_cells:
        raise StructureError("k_init cannot exceed the number of cells")
    rng = streams.get(rngmod.INIT)
    assignments = rng.integers(0, config.k_init, size=matrix.n_cells).astype(np.int64)
    stats = recompute_stats(matrix, assignments, config.k_init)
    keep = [j for j, s in enumerate(stats) if s.n_cells > 0]
    remap = -np.ones(config.k_init, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    assignments = remap[assignments]
    stats = [stats[j] for j in keep]
    log_theta = np.vstack(
        [sample_theta_posterior(s, config.hp.lam, rng).values for s in stats]
    )
    weights = sample_mixing_weights(
        np.array([s.n_cells for s in stats]), config.hp.alpha, rng
    )
    state = ModelState(assignments, weights, log_theta, stats)
    return state


def sample_assignments_parallel(
    state: ModelState,
    matrix: CountMatrix,
    rng: np.random.Generator,
    n_threads: int = 1,
) -> ModelState:
    """Resample every cell's assignment over the K live clusters.

    Cells are conditionally independent given the frozen profiles and
    weights, so the sweep is data-parallel: each worker writes a disjoint
    assignment slice and accumulates private integer stat partials that
    are merged in block order. One uniform per cell is drawn up front, in
    cell order, which makes the output independent of n_threads.

    If the proposed label vector would empty a cluster the whole sweep is
    rejected and the state is returned unchanged (cluster death is the
    merge moves' job); on the occupancy-preserving support the per-cell
    categorical is the exact conditional, so installs need no further
    accept test.
    """
    n = matrix.n_cells
    k = state.k
    v = matrix.n_genes
    uniforms = rng.random(n)
    log_theta_t = np.ascontiguousarray(state.log_theta.T)
    log_pi = np.log(state.weights[:-1])
    out = np.empty(n, dtype=np.int64)

    n_threads = max(1, min(n_threads, n)) if n else 1
    if n_threads == 1:
        counts = np.zeros(k, dtype=np.int64)
        genes = np.zeros((k, v), dtype=np.int64)
        err = np.zeros(1, dtype=np.int64)
        assign_block(
            matrix.indptr, matrix.indices, matrix.data, log_theta_t, log_pi,
            uniforms, 0, n, out, counts, genes, err,
        )
        if err[0]:
            raise SamplerError("a cell had no finite assignment score")
        merged_counts, merged_genes = counts, genes
    else:
        bounds = np.linspace(0, n, n_threads + 1).astype(np.int64)
        blocks = [
            (
                np.zeros(k, dtype=np.int64),
                np.zeros((k, v), dtype=np.int64),
                np.zeros(1, dtype=np.int64),
            )
            for _ in range(n_threads)
        ]
        pool = _pool(n_threads)
        futures = [
            pool.submit(
                assign_block,
                matrix.indptr, matrix.indices, matrix.data, log_theta_t, log_pi,
                uniforms, bounds[b], bounds[b + 1], out,
                blocks[b][0], blocks[b][1], blocks[b][2],
            )
            for b in range(n_threads)
        ]
        for f in futures:
            f.result()
        if any(int(b[2][0]) for b in blocks):
            raise SamplerError("a cell had no finite assignment score")
        merged_counts = np.zeros(k, dtype=np.int64)
        merged_genes = np.zeros((k, v), dtype=np.int64)
        for b in range(n_threads):
            merged_counts += blocks[b][0]
            merged_genes += blocks[b][1]

    if k > 1 and int(merged_counts.min()) == 0:
        return state  # proposal would empty a cluster; keep the current labels
    stats = [
        ClusterStats(int(merged_counts[j]), merged_genes[j], int(merged_genes[j].sum()))
        for j in range(k)
    ]
    return ModelState(out, state.weights, state.log_theta, stats)


def resample_cluster_params(
    state: ModelState,
    hp: Hyperparams,
    theta_rng: np.random.Generator,
    weights_rng: np.random.Generator | None = None,
) -> ModelState:
    """Redraw every cluster profile and the mixing weights from their posteriors."""
    if weights_rng is None:
        weights_rng = theta_rng
    alphas = hp.lam + np.vstack([s.gene_counts for s in state.stats]).astype(np.float64)
    log_theta = log_dirichlet_draw(alphas, theta_rng)
    weights = sample_mixing_weights(state.cluster_sizes(), hp.alpha, weights_rng)
    return ModelState(state.assignments, weights, log_theta, state.stats)


def _member_csr(matrix: CountMatrix, members: np.ndarray):
    """Gather the members' rows into a compact member-local CSR."""
    starts = matrix.indptr[members]
    lens = (matrix.indptr[members + 1] - starts).astype(np.int64)
    sub_indptr = np.zeros(len(members) + 1, dtype=np.int64)
    np.cumsum(lens, out=sub_indptr[1:])
    total = int(sub_indptr[-1])
    if total:
        flat = np.repeat(starts, lens) + (np.arange(total) - np.repeat(sub_indptr[:-1], lens))
        sub_indices = matrix.indices[flat]
        sub_data = matrix.data[flat]
    else:
        sub_indices = np.zeros(0, dtype=np.int32)
        sub_data = np.zeros(0, dtype=np.int64)
    return sub_indptr, sub_indices, sub_data


def _side_stats(
    n_genes: int, labels: np.ndarray, sub_indptr, sub_indices, sub_data
) -> tuple[ClusterStats, ClusterStats]:
    genes = np.zeros((2, n_genes), dtype=np.int64)
    if len(sub_data):
        per_entry = np.repeat(labels.astype(np.int64), np.diff(sub_indptr))
        np.add.at(genes, (per_entry, sub_indices), sub_data)
    n1 = int(labels.sum())
    n0 = len(labels) - n1
    return (
        ClusterStats(n0, genes[0], int(genes[0].sum())),
        ClusterStats(n1, genes[1], int(genes[1].sum())),
    )


def _anchored_launch(
    n: int, rng: np.random.Generator
) -> tuple[np.ndarray, int]:
    """Initial side labels with the two anchors placed: position 0 is
    pinned to side 0, one uniformly chosen other position to side 1, and
    the rest are fair coin flips. Returns (labels, side-1 anchor)."""
    anchor1 = 1 + int(rng.integers(n - 1))
    labels = (rng.random(n) < 0.5).astype(np.int8)
    labels[0] = 0
    labels[anchor1] = 1
    return labels, anchor1


def local_gibbs_subclusters(
    state: ModelState,
    matrix: CountMatrix,
    cluster: int,
    iters: int,
    rng: np.random.Generator,
    lam_bar: float = 1.0,
) -> tuple[SubclusterState, np.ndarray]:
    """Learn a two-way substructure of one cluster by restricted Gibbs.

    Starts from an anchored random side labeling, then alternates a
    sequential scan of the two-sided conditional with a conjugate redraw
    of both side profiles, ``iters`` times. Returns the final scaffolding
    plus the log conditional probability each member's final label had in
    the last scan, which is the assignment part of the forward transition
    probability (the two anchor members contribute probability one).
    """
    members = np.nonzero(state.assignments == cluster)[0]
    n = len(members)
    if n < 2:
        raise ProposalImpossibleError(f"cluster {cluster} has {n} member(s); need >= 2")
    sub_indptr, sub_indices, sub_data = _member_csr(matrix, members)

    labels, anchor1 = _anchored_launch(n, rng)
    s0, s1 = _side_stats(matrix.n_genes, labels, sub_indptr, sub_indices, sub_data)
    ltb0 = log_dirichlet_draw(lam_bar + s0.gene_counts, rng)
    ltb1 = log_dirichlet_draw(lam_bar + s1.gene_counts, rng)

    logq = np.zeros(n, dtype=np.float64)
    for _ in range(iters):
        u = rng.random(n)
        local_gibbs_sweep(
            sub_indptr, sub_indices, sub_data, labels, ltb0, ltb1, u, logq, 0, anchor1
        )
        s0, s1 = _side_stats(matrix.n_genes, labels, sub_indptr, sub_indices, sub_data)
        ltb0 = log_dirichlet_draw(lam_bar + s0.gene_counts, rng)
        ltb1 = log_dirichlet_draw(lam_bar + s1.gene_counts, rng)

    sub = SubclusterState(
        parent_cluster=cluster,
        members=members,
        sub_assignments=labels,
        sub_stats=(s0, s1),
        log_theta_bar=np.vstack([ltb0, ltb1]),
    )
    return sub, logq


def _count_dot(counts: np.ndarray, log_theta: np.ndarray) -> float:
    """sum_u counts_u * log_theta_u skipping zero counts (0 * -inf is 0 here)."""
    nz = counts.nonzero()[0]
    if len(nz) == 0:
        return 0.0
    return float(np.dot(counts[nz].astype(np.float64), log_theta[nz]))


def split_log_state_ratio(
    parent_stats: ClusterStats,
    parent_log_theta: np.ndarray,
    parent_weight: float,
    child_stats: tuple[ClusterStats, ClusterStats],
    child_log_thetas: np.ndarray,
    child_weights: tuple[float, float],
    hp: Hyperparams,
) -> float:
    """log p(S*)/p(S) for replacing one cluster with two.

    Equals log_joint(split state) - log_joint(original) exactly, because
    every other cluster's terms cancel. Likelihood sums are evaluated as
    ClusterStats dot log-profile, never per cell. -inf is a legal result
    (the proposal is then rejected automatically).
    """
    lam = hp.lam
    v = len(parent_log_theta)
    n_k = parent_stats.n_cells
    n0, n1 = child_stats[0].n_cells, child_stats[1].n_cells
    w0, w1 = child_weights
    total = math.log(hp.alpha)
    total += (n0 - 1) * math.log(w0) + (n1 - 1) * math.log(w1)
    total -= (n_k - 1) * math.log(parent_weight)
    total += math.lgamma(lam * v) - v * math.lgamma(lam)
    if lam != 1.0:
        total += (lam - 1.0) * float(
            child_log_thetas[0].sum() + child_log_thetas[1].sum() - parent_log_theta.sum()
        )
    total += _count_dot(child_stats[0].gene_counts, child_log_thetas[0])
    total += _count_dot(child_stats[1].gene_counts, child_log_thetas[1])
    total -= _count_dot(parent_stats.gene_counts, parent_log_theta)
    return total


def _n_split_eligible(sizes: np.ndarray) -> int:
    return int((sizes >= 2).sum())


def _log_beta_pdf(x: float, a: float, b: float) -> float:
    return (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + (a - 1.0) * math.log(x)
        + (b - 1.0) * math.log1p(-x)
    )


def random_split_transition_log(n0: int, n1: int) -> float:
    """Assignment part of the random-split/merge transition ratio."""
    return (n0 + n1 - 2) * math.log(0.5)


def propose_split(
    state: ModelState,
    matrix: CountMatrix,
    cluster: int,
    rng: np.random.Generator,
    hp: Hyperparams,
    local_gibbs_iters: int = 1,
) -> MoveProposal | None:
    """Build a split proposal for one cluster, or None if it degenerated.

    The parent weight is apportioned by a Beta(n0, n1) fraction, which is
    the exact conditional of the child weights given their sum; the child
    profiles are the final local-Gibbs profiles. The forward transition
    combines target selection, the final-scan assignment conditionals, the
    profile densities, and the apportionment density on its one free
    dimension; the reverse transition is the matching merge move: pair
    selection plus the density of redrawing the parent profile from the
    merged posterior (re-summing the weights is deterministic).
    """
    sizes = state.cluster_sizes()
    if sizes[cluster] < 2:
        raise ProposalImpossibleError(f"cluster {cluster} is too small to split")
    sub, logq = local_gibbs_subclusters(
        state, matrix, cluster, local_gibbs_iters, rng, lam_bar=hp.lam_bar
    )
    n0, n1 = sub.side_sizes()
    if n0 == 0 or n1 == 0:
        return None
    n_k = int(sizes[cluster])
    pi_k = float(state.weights[cluster])
    frac = float(rng.beta(n0, n1))
    frac = min(max(frac, 1e-15), 1.0 - 1e-15)
    w0 = pi_k * frac
    w1 = pi_k * (1.0 - frac)
    lsr = split_log_state_ratio(
        state.stats[cluster],
        state.log_theta[cluster],
        pi_k,
        sub.sub_stats,
        sub.log_theta_bar,
        (w0, w1),
        hp,
    )
    ltf = float(logq.sum())
    ltf += log_dirichlet_pdf(sub.log_theta_bar[0], hp.lam_bar + sub.sub_stats[0].gene_counts)
    ltf += log_dirichlet_pdf(sub.log_theta_bar[1], hp.lam_bar + sub.sub_stats[1].gene_counts)
    ltf += _log_beta_pdf(frac, n0, n1) - math.log(pi_k)
    ltf -= math.log(_n_split_eligible(sizes))
    pairs_after = (state.k + 1) * state.k // 2
    ltr = log_dirichlet_pdf(state.log_theta[cluster], hp.lam + state.stats[cluster].gene_counts)
    ltr -= math.log(pairs_after)
    return MoveProposal(
        kind="split",
        source=(cluster,),
        members=sub.members,
        sub_assignments=sub.sub_assignments,
        weights=np.array([w0, w1]),
        log_thetas=sub.log_theta_bar,
        stats=sub.sub_stats,
        log_transition_forward=ltf,
        log_transition_reverse=ltr,
        log_state_ratio=lsr,
    )


def propose_merge_random(
    state: ModelState,
    matrix: CountMatrix,
    pair: tuple[int, int],
    rng: np.random.Generator,
    hp: Hyperparams,
) -> MoveProposal:
    """Build a merge proposal for two clusters.

    The merged profile is drawn from the pooled posterior and the merged
    weight is the sum. The state ratio is the negated split ratio of the
    corresponding split of the merged state. The reverse move is a random
    split: (1/2)^(n0+n1-2) for the side labels, times the densities of
    redrawing both child profiles and of re-apportioning the merged weight
    into the current pair, plus target selection on each side.
    """
    a, b = pair
    if a == b:
        raise ProposalImpossibleError("merge requires two distinct clusters")
    if state.k < 2:
        raise ProposalImpossibleError("merge requires at least two clusters")
    sa, sb = state.stats[a], state.stats[b]
    merged = sa.merged_with(sb)
    theta_new = log_dirichlet_draw(hp.lam + merged.gene_counts, rng)
    w_new = float(state.weights[a] + state.weights[b])
    lsr = -split_log_state_ratio(
        merged,
        theta_new,
        w_new,
        (sa, sb),
        np.vstack([state.log_theta[a], state.log_theta[b]]),
        (float(state.weights[a]), float(state.weights[b])),
        hp,
    )
    pairs_now = state.k * (state.k - 1) // 2
    ltf = log_dirichlet_pdf(theta_new, hp.lam + merged.gene_counts)
    ltf -= math.log(pairs_now)
    sizes_after = np.array(
        [s.n_cells for j, s in enumerate(state.stats) if j != a and j != b] + [merged.n_cells]
    )
    ltr = random_split_transition_log(sa.n_cells, sb.n_cells)
    ltr += log_dirichlet_pdf(state.log_theta[a], hp.lam_bar + sa.gene_counts)
    ltr += log_dirichlet_pdf(state.log_theta[b], hp.lam_bar + sb.gene_counts)
    frac = float(state.weights[a]) / w_new
    ltr += _log_beta_pdf(frac, sa.n_cells, sb.n_cells) - math.log(w_new)
    ltr -= math.log(_n_split_eligible(sizes_after))
    return MoveProposal(
        kind="merge",
        source=(a, b),
        members=None,
        sub_assignments=None,
        weights=np.array([w_new]),
        log_thetas=theta_new[None, :],
        stats=(merged,),
        log_transition_forward=ltf,
        log_transition_reverse=ltr,
        log_state_ratio=lsr,
    )


def propose_merge_gibbs(
    state: ModelState,
    matrix: CountMatrix,
    pair: tuple[int, int],
    rng: np.random.Generator,
    hp: Hyperparams,
    local_gibbs_iters: int = 1,
) -> MoveProposal:
    """Merge two clusters, scored against the local-Gibbs split mechanism.

    The reverse density is evaluated by a dry launch on the merged
    members: the same anchored initialization and intermediate scans the
    split move would run, then an evaluation pass that accumulates the
    probability of regenerating exactly the current pair. Because the
    reverse mechanism is identical to the executed split move, split and
    merge flows balance exactly; this is the merge the iteration driver
    uses.
    """
    a, b = pair
    if a == b:
        raise ProposalImpossibleError("merge requires two distinct clusters")
    if state.k < 2:
        raise ProposalImpossibleError("merge requires at least two clusters")
    members_a = np.nonzero(state.assignments == a)[0]
    members_b = np.nonzero(state.assignments == b)[0]
    # side 0 is the cluster holding the lowest member, matching the split
    # move's convention that side 0 keeps the parent slot
    if members_a[0] > members_b[0]:
        a, b = b, a
        members_a, members_b = members_b, members_a
    sa, sb = state.stats[a], state.stats[b]
    merged = sa.merged_with(sb)
    theta_new = log_dirichlet_draw(hp.lam + merged.gene_counts, rng)
    w_new = float(state.weights[a] + state.weights[b])
    lsr = -split_log_state_ratio(
        merged,
        theta_new,
        w_new,
        (sa, sb),
        np.vstack([state.log_theta[a], state.log_theta[b]]),
        (float(state.weights[a]), float(state.weights[b])),
        hp,
    )
    pairs_now = state.k * (state.k - 1) // 2
    ltf = log_dirichlet_pdf(theta_new, hp.lam + merged.gene_counts)
    ltf -= math.log(pairs_now)

    members = np.concatenate([members_a, members_b])
    order = np.argsort(members)
    members = members[order]
    target = np.concatenate(
        [np.zeros(len(members_a), dtype=np.int8), np.ones(len(members_b), dtype=np.int8)]
    )[order]
    n = len(members)
    sub_indptr, sub_indices, sub_data = _member_csr(matrix, members)
    labels, anchor1 = _anchored_launch(n, rng)
    if target[anchor1] != 1:
        # this launch cannot regenerate the pair: reverse probability zero
        logq_rev = -math.inf
    else:
        s0, s1 = _side_stats(matrix.n_genes, labels, sub_indptr, sub_indices, sub_data)
        ltb0 = log_dirichlet_draw(hp.lam_bar + s0.gene_counts, rng)
        ltb1 = log_dirichlet_draw(hp.lam_bar + s1.gene_counts, rng)
        scratch = np.zeros(n, dtype=np.float64)
        for _ in range(local_gibbs_iters - 1):
            u = rng.random(n)
            local_gibbs_sweep(
                sub_indptr, sub_indices, sub_data, labels, ltb0, ltb1, u, scratch, 0, anchor1
            )
            s0, s1 = _side_stats(matrix.n_genes, labels, sub_indptr, sub_indices, sub_data)
            ltb0 = log_dirichlet_draw(hp.lam_bar + s0.gene_counts, rng)
            ltb1 = log_dirichlet_draw(hp.lam_bar + s1.gene_counts, rng)
        logq_rev = float(
            local_gibbs_eval(
                sub_indptr, sub_indices, sub_data, labels, target, ltb0, ltb1, 0, anchor1
            )
        )

    sizes_after = np.array(
        [s.n_cells for j, s in enumerate(state.stats) if j != a and j != b] + [merged.n_cells]
    )
    ltr = logq_rev
    ltr += log_dirichlet_pdf(state.log_theta[a], hp.lam_bar + sa.gene_counts)
    ltr += log_dirichlet_pdf(state.log_theta[b], hp.lam_bar + sb.gene_counts)
    frac = float(state.weights[a]) / w_new
    ltr += _log_beta_pdf(frac, sa.n_cells, sb.n_cells) - math.log(w_new)
    ltr -= math.log(_n_split_eligible(sizes_after))
    return MoveProposal(
        kind="merge",
        source=(a, b),
        members=members,
        sub_assignments=target,
        weights=np.array([w_new]),
        log_thetas=theta_new[None, :],
        stats=(merged,),
        log_transition_forward=ltf,
        log_transition_reverse=ltr,
        log_state_ratio=lsr,
    )


def mh_accept(proposal: MoveProposal, rng: np.random.Generator) -> bool:
    """Metropolis-Hastings accept/reject for a move proposal."""
    log_acc = (
        proposal.log_state_ratio
        + proposal.log_transition_reverse
        - proposal.log_transition_forward
    )
    if math.isnan(log_acc):
        warnings.warn(
            f"NaN acceptance ratio for {proposal.kind} of {proposal.source}; rejecting",
            RuntimeWarning,
            stacklevel=2,
        )
        return False
    if log_acc >= 0:
        return True
    return math.log(rng.random()) < log_acc


def _apply_split(state: ModelState, prop: MoveProposal) -> ModelState:
    k = prop.source[0]
    new_id = state.k
    assignments = state.assignments.copy()
    assignments[prop.members[prop.sub_assignments == 1]] = new_id
    weights = np.insert(state.weights, new_id, prop.weights[1])
    weights[k] = prop.weights[0]
    log_theta = np.vstack([state.log_theta, prop.log_thetas[1]])
    log_theta[k] = prop.log_thetas[0]
    stats = list(state.stats)
    stats[k] = prop.stats[0]
    stats.append(prop.stats[1])
    return ModelState(assignments, weights, log_theta, stats)


def _apply_merge(state: ModelState, prop: MoveProposal) -> ModelState:
    a, b = prop.source
    lo, hi = (a, b) if a < b else (b, a)
    assignments = state.assignments.copy()
    assignments[assignments == hi] = lo
    assignments[assignments > hi] -= 1
    weights = np.delete(state.weights, hi)
    weights[lo] = prop.weights[0]
    log_theta = np.delete(state.log_theta, hi, axis=0)
    log_theta[lo] = prop.log_thetas[0]
    stats = [s for j, s in enumerate(state.stats) if j != hi]
    stats[lo] = prop.stats[0]
    return ModelState(assignments, weights, log_theta, stats)


def step(
    state: ModelState,
    matrix: CountMatrix,
    config: SamplerConfig,
    streams: Streams,
    iteration: int,
) -> tuple[ModelState, IterationTrace]:
    """One full iteration: sweep, prune, resample, then coin-flipped
    split/merge move slots."""
    hp = config.hp
    t_start = time.perf_counter()

    state = sample_assignments_parallel(
        state, matrix, streams.get(rngmod.ASSIGN, iteration), config.n_threads
    )
    state = prune_empty_clusters(state)
    t_sweep = time.perf_counter()

    state = resample_cluster_params(
        state, hp, streams.get(rngmod.THETA, iteration), streams.get(rngmod.WEIGHTS, iteration)
    )
    t_resample = time.perf_counter()

    split_proposed = split_accepted = merge_proposed = merge_accepted = 0

    def split_attempt(st: ModelState, move_rng: np.random.Generator) -> ModelState:
        nonlocal split_proposed, split_accepted
        eligible = np.nonzero(st.cluster_sizes() >= 2)[0]
        if len(eligible) == 0:
            return st
        target = int(eligible[move_rng.integers(len(eligible))])
        split_proposed += 1
        prop = propose_split(st, matrix, target, move_rng, hp, config.local_gibbs_iters)
        if prop is not None and mh_accept(prop, move_rng):
            st = _apply_split(st, prop)
            split_accepted += 1
        return st

    def merge_attempt(st: ModelState, move_rng: np.random.Generator) -> ModelState:
        nonlocal merge_proposed, merge_accepted
        if st.k < 2:
            return st
        a = int(move_rng.integers(st.k))
        b = int(move_rng.integers(st.k - 1))
        if b >= a:
            b += 1
        merge_proposed += 1
        prop = propose_merge_gibbs(st, matrix, (a, b), move_rng, hp, config.local_gibbs_iters)
        if mh_accept(prop, move_rng):
            st = _apply_merge(st, prop)
            merge_accepted += 1
        return st

    # Each move slot flips a fair coin between a split and a merge
    # attempt: the mixture of the two half-moves is invariant for the
    # joint density, which a fixed split-then-merge ordering is not.
    # One-sided configurations run their attempts directly.
    n_split, n_merge = config.split_moves_per_iter, config.merge_moves_per_iter
    for j in range(n_split + n_merge):
        move_rng = streams.get(rngmod.MOVE, iteration, j)
        if n_split == 0:
            state = merge_attempt(state, move_rng)
        elif n_merge == 0:
            state = split_attempt(state, move_rng)
        elif move_rng.random() < 0.5:
            state = split_attempt(state, move_rng)
        else:
            state = merge_attempt(state, move_rng)
    t_moves = time.perf_counter()

    trace = IterationTrace(
        iteration=iteration,
        k=state.k,
        log_joint=log_joint(state, matrix, hp),
        split_proposed=split_proposed,
        split_accepted=split_accepted,
        merge_proposed=merge_proposed,
        merge_accepted=merge_accepted,
        wall_ms=(t_moves - t_start) * 1e3,
        sweep_ms=(t_sweep - t_start) * 1e3,
        resample_ms=(t_resample - t_sweep) * 1e3,
        moves_ms=(t_moves - t_resample) * 1e3,
    )
    return state, trace


def run(matrix: CountMatrix, config: SamplerConfig) -> RunReport:
    """Execute the configured number of iterations and report the result.

    The reported labels are the maximum-log-joint post-burn-in state by
    default ("map"); "last" reports the final iterate. Both are recorded.
    """
    config.validate()
    matrix.validate()
    streams = Streams(config.seed)
    t0 = time.perf_counter()
    state = init_state(matrix, config, streams)
    init_ms = (time.perf_counter() - t0) * 1e3

    trace: list[IterationTrace] = []
    best_lj = -math.inf
    best_labels = state.assignments.copy()
    best_iter = -1
    sweep_ms = resample_ms = moves_ms = 0.0
    for t in range(config.n_iterations):
        state, tr = step(state, matrix, config, streams, t)
        trace.append(tr)
        sweep_ms += tr.sweep_ms
        resample_ms += tr.resample_ms
        moves_ms += tr.moves_ms
        if t >= config.burn_in and tr.log_joint > best_lj:
            best_lj = tr.log_joint
            best_labels = state.assignments.copy()
            best_iter = t

    labels_last = state.assignments.copy()
    labels = best_labels if config.estimator == "map" else labels_last
    total_ms = (time.perf_counter() - t0) * 1e3
    return RunReport(
        labels=labels,
        labels_last=labels_last,
        labels_map=best_labels,
        map_iteration=best_iter,
        final_k=int(labels.max()) + 1 if len(labels) else 0,
        trace=trace,
        config={
            "alpha": config.hp.alpha,
            "lam": config.hp.lam,
            "lam_bar": config.hp.lam_bar,
            "n_iterations": config.n_iterations,
            "local_gibbs_iters": config.local_gibbs_iters,
            "split_moves_per_iter": config.split_moves_per_iter,
            "merge_moves_per_iter": config.merge_moves_per_iter,
            "k_init": config.k_init,
            "seed": config.seed,
            "n_threads": config.n_threads,
            "burn_in": config.burn_in,
            "estimator": config.estimator,
        },
        wall_ms={
            "init": init_ms,
            "sweep": sweep_ms,
            "resample": resample_ms,
            "moves": moves_ms,
            "total": total_ms,
        },
        seed=config.seed,
    )
