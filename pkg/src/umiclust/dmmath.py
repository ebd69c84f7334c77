"""Log-space probability kernels for the Dirichlet-multinomial mixture.

Everything runs in natural-log space: with tens of thousands of genes the
linear-space products underflow immediately. Multinomial coefficients are
dropped throughout; they depend only on the data, so they cancel in every
assignment probability and every state ratio, and the joint density is
reported up to that data-only constant.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln, logsumexp

from .state import ClusterStats, CountMatrix, Hyperparams, ModelState

__all__ = [
    "LogProbVector",
    "log_gamma",
    "log_multinomial_loglik",
    "sample_theta_posterior",
    "sample_mixing_weights",
    "log_joint",
    "log_dirichlet_pdf",
    "log_dirichlet_draw",
]

# exp(-745) is the smallest positive normal-ish double; log values are
# clamped here so a zero gamma draw cannot produce -inf in a profile.
LOG_TINY = -745.0


class LogProbVector:
    """A length-V vector of log probabilities.

    normalized=True asserts logsumexp(values) == 0 within 1e-9.
    """

    __slots__ = ("values", "normalized")

    def __init__(self, values: np.ndarray, normalized: bool = True):
        self.values = np.asarray(values, dtype=np.float64)
        self.normalized = bool(normalized)

    def validate(self) -> None:
        if self.normalized and abs(float(logsumexp(self.values))) > 1e-9:
            raise ValueError("log-probability vector does not normalize to 1")


def log_gamma(x: float) -> float:
    """Natural log of the gamma function for x > 0."""
    if not x > 0:
        raise ValueError(f"log_gamma requires x > 0, got {x}")
    return math.lgamma(x)


def log_multinomial_loglik(
    gene_idx: np.ndarray, counts: np.ndarray, log_theta: np.ndarray
) -> float:
    """Unnormalized multinomial log likelihood of one cell's nonzeros.

    Returns sum_u x_u * log_theta[u] over the stored entries. An empty
    cell scores 0 in every cluster. A -inf profile entry with a positive
    count legitimately gives -inf.
    """
    if len(gene_idx) == 0:
        return 0.0
    return float(np.dot(counts, log_theta[gene_idx]))


def log_dirichlet_draw(alphas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw log(theta) with theta ~ Dirichlet(alphas), stably for small shapes.

    Uses the shape-boost identity Gamma(a) == Gamma(a+1) * U^(1/a): the
    boosted draw never underflows, and the correction is applied in log
    space, so tiny shapes yield very negative logs instead of exact zeros.
    Anything below the representable range is clamped to LOG_TINY.
    """
    a = np.asarray(alphas, dtype=np.float64)
    g = rng.standard_gamma(a + 1.0)
    u = rng.random(a.shape)
    with np.errstate(divide="ignore"):
        log_g = np.log(g) + np.log(u) / a
    log_g = np.maximum(log_g, LOG_TINY)
    out = log_g - logsumexp(log_g, axis=-1, keepdims=True)
    return np.maximum(out, LOG_TINY)


def sample_theta_posterior(
    stats: ClusterStats, lam: float, rng: np.random.Generator
) -> LogProbVector:
    """Draw a cluster profile from Dirichlet(lam + gene_counts), in log space."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    values = log_dirichlet_draw(lam + stats.gene_counts, rng)
    return LogProbVector(values, normalized=True)


def sample_mixing_weights(
    cluster_sizes: np.ndarray, alpha: float, rng: np.random.Generator
) -> np.ndarray:
    """Draw K+1 mixing weights from Dirichlet(n_1, ..., n_K, alpha).

    The final entry is the mass reserved for the not-yet-opened cluster.
    Empty clusters must be pruned first.
    """
    sizes = np.asarray(cluster_sizes, dtype=np.float64)
    if np.any(sizes < 1):
        raise ValueError("cluster sizes must all be >= 1; prune empties first")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    log_w = log_dirichlet_draw(np.concatenate([sizes, [alpha]]), rng)
    w = np.exp(log_w)
    return w / w.sum()


def log_dirichlet_pdf(log_theta: np.ndarray, alphas: np.ndarray) -> float:
    """Density of Dirichlet(alphas) at theta, given as log(theta)."""
    a = np.asarray(alphas, dtype=np.float64)
    return float(gammaln(a.sum()) - gammaln(a).sum() + np.dot(a - 1.0, log_theta))


def log_joint(state: ModelState, matrix: CountMatrix, hp: Hyperparams) -> float:
    """Joint log density of (weights, profiles, assignments, data).

    Up to a data-only constant (dropped multinomial coefficients):

        K log(alpha) - logGamma(alpha) + alpha log(w_unopened)
        + sum_k (n_k - 1) log(w_k)
        + K [logGamma(lam V) - V logGamma(lam)]
        + sum_k sum_u (lam - 1 + counts_ku) log(theta_ku)

    Returns -inf if a gene with positive count has a -inf profile entry.
    """
    k = state.k
    v = state.n_genes
    lam, alpha = hp.lam, hp.alpha
    log_w = np.log(state.weights)
    sizes = state.cluster_sizes()
    total = k * math.log(alpha) - math.lgamma(alpha)
    total += alpha * float(log_w[-1])
    total += float(np.dot(sizes - 1.0, log_w[:-1]))
    total += k * (math.lgamma(lam * v) - v * math.lgamma(lam))
    for j in range(k):
        row = state.log_theta[j]
        counts = state.stats[j].gene_counts
        nz = counts.nonzero()[0]
        if np.any(np.isneginf(row[nz])):
            return float("-inf")
        total += float(np.dot(counts[nz].astype(np.float64), row[nz]))
        if lam != 1.0:
            prior_sum = float(row.sum())
            if math.isinf(prior_sum):
                return float("-inf") if lam > 1.0 else float("inf")
            total += (lam - 1.0) * prior_sum
    return total
