"""Numba kernels for the sampler hot paths.

The assignment kernel is compiled nogil so Python threads achieve real
parallelism; each call touches only its own slice of the output arrays
plus caller-owned accumulators, and every per-cell decision is a pure
function of (inputs, that cell's uniform), so results are identical for
any thread count or block decomposition.

The local two-sided scans keep two anchor positions fixed, one per side,
so neither side can empty mid-scan and every set outcome has exactly one
labeling. The eval variant walks the scan toward a target labeling and
returns the log probability the sampling scan would have had of producing
it, which is the reverse-density evaluation merge moves need.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

__all__ = ["assign_block", "local_gibbs_sweep", "local_gibbs_eval"]


@njit(cache=True, nogil=True)
def assign_block(
    indptr,
    indices,
    data,
    log_theta_t,  # (V, K) transposed profiles, C-contiguous
    log_pi,  # (K,) live-cluster log weights
    uniforms,  # (N,) one uniform per cell
    lo,
    hi,
    out_assign,  # (N,) written at [lo, hi)
    counts_out,  # (K,) this block's member-count accumulator
    gene_out,  # (K, V) this block's gene-count accumulator
    err_flag,  # (1,) set to 1 if a cell had no finite score
):
    k = log_pi.shape[0]
    scores = np.empty(k, dtype=np.float64)
    for i in range(lo, hi):
        for c in range(k):
            scores[c] = log_pi[c]
        for j in range(indptr[i], indptr[i + 1]):
            g = indices[j]
            x = float(data[j])
            for c in range(k):
                scores[c] += x * log_theta_t[g, c]
        m = scores[0]
        for c in range(1, k):
            if scores[c] > m:
                m = scores[c]
        if m == -np.inf or math.isnan(m):
            err_flag[0] = 1
            out_assign[i] = 0
            counts_out[0] += 1
            for j in range(indptr[i], indptr[i + 1]):
                gene_out[0, indices[j]] += data[j]
            continue
        total = 0.0
        for c in range(k):
            scores[c] = math.exp(scores[c] - m)
            total += scores[c]
        target = uniforms[i] * total
        cum = 0.0
        chosen = k - 1
        for c in range(k):
            cum += scores[c]
            if target < cum:
                chosen = c
                break
        out_assign[i] = chosen
        counts_out[chosen] += 1
        for j in range(indptr[i], indptr[i + 1]):
            gene_out[chosen, indices[j]] += data[j]


@njit(cache=True, nogil=True)
def _side_scores(indptr, indices, data, i, ltb0, ltb1):
    l0 = 0.0
    l1 = 0.0
    for j in range(indptr[i], indptr[i + 1]):
        g = indices[j]
        x = float(data[j])
        l0 += x * ltb0[g]
        l1 += x * ltb1[g]
    return l0, l1


@njit(cache=True, nogil=True)
def local_gibbs_sweep(
    indptr,  # member-local CSR over the cluster's cells
    indices,
    data,
    labels,  # (n,) int8 side labels, updated in place
    ltb0,  # (V,) side-0 log profile
    ltb1,  # (V,) side-1 log profile
    uniforms,  # (n,) one uniform per member
    logq_out,  # (n,) log prob of the label each member ended with
    anchor0,  # position pinned to side 0, never rescanned
    anchor1,  # position pinned to side 1, never rescanned
):
    """One sequential scan of the two-sided conditional.

    Each scanned member is weighted by (side size excluding itself) times
    its likelihood under that side's profile. The anchors hold one member
    on each side, so both weights stay positive. Returns final side sizes.
    """
    n = labels.shape[0]
    n0 = 0
    for i in range(n):
        if labels[i] == 0:
            n0 += 1
    n1 = n - n0
    for i in range(n):
        if i == anchor0 or i == anchor1:
            logq_out[i] = 0.0
            continue
        if labels[i] == 0:
            n0 -= 1
        else:
            n1 -= 1
        l0, l1 = _side_scores(indptr, indices, data, i, ltb0, ltb1)
        s0 = math.log(n0) + l0
        s1 = math.log(n1) + l1
        m = s0 if s0 > s1 else s1
        w0 = math.exp(s0 - m)
        w1 = math.exp(s1 - m)
        total = w0 + w1
        if uniforms[i] * total < w0:
            labels[i] = 0
            n0 += 1
            logq_out[i] = s0 - m - math.log(total)
        else:
            labels[i] = 1
            n1 += 1
            logq_out[i] = s1 - m - math.log(total)
    return n0, n1


@njit(cache=True, nogil=True)
def local_gibbs_eval(
    indptr,
    indices,
    data,
    labels,  # (n,) launch labels, mutated toward target during the pass
    target,  # (n,) the labeling whose scan probability is wanted
    ltb0,
    ltb1,
    anchor0,
    anchor1,
):
    """Log probability that a sampling scan from this launch state would
    end exactly at ``target``. Mirrors local_gibbs_sweep step for step."""
    n = labels.shape[0]
    n0 = 0
    for i in range(n):
        if labels[i] == 0:
            n0 += 1
    n1 = n - n0
    total_logq = 0.0
    for i in range(n):
        if i == anchor0 or i == anchor1:
            continue
        if labels[i] == 0:
            n0 -= 1
        else:
            n1 -= 1
        l0, l1 = _side_scores(indptr, indices, data, i, ltb0, ltb1)
        s0 = math.log(n0) + l0
        s1 = math.log(n1) + l1
        m = s0 if s0 > s1 else s1
        total = math.exp(s0 - m) + math.exp(s1 - m)
        r = target[i]
        if r == 0:
            total_logq += s0 - m - math.log(total)
            labels[i] = 0
            n0 += 1
        else:
            total_logq += s1 - m - math.log(total)
            labels[i] = 1
            n1 += 1
    return total_logq
