"""Inner-loop kernels, each with a numba version and a numpy twin.

The public names dispatch on :data:`sgmfs._accel.USE_NUMBA`. The ``*_numba``
and ``*_numpy`` variants stay importable so tests and the benchmark can pit
them against each other.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

# rows per block in the numpy distance fallback (bounds the temporary to ~32 MB)
_BLOCK_BYTES = 32 * 2**20


# --------------------------------------------------------------------------
# pairwise squared Euclidean distances, rows are samples
# --------------------------------------------------------------------------

@njit
def pairwise_sq_dists_numba(a, b):
    n, p = a.shape
    m = b.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(p):
                diff = a[i, k] - b[j, k]
                acc += diff * diff
            out[i, j] = acc
    return out


def pairwise_sq_dists_numpy(a, b):
    n, p = a.shape
    m = b.shape[0]
    out = np.empty((n, m))
    rows = max(1, _BLOCK_BYTES // max(1, 8 * m * p))
    for start in range(0, n, rows):
        stop = min(n, start + rows)
        diff = a[start:stop, None, :] - b[None, :, :]
        out[start:stop] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


# --------------------------------------------------------------------------
# multiplicative graph step: M * sqrt(num / max(den, floor)), symmetrised
# --------------------------------------------------------------------------

@njit
def multiplicative_step_numba(m, num, den, floor):
    n = m.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dij = den[i, j]
            if dij < floor:
                dij = floor
            dji = den[j, i]
            if dji < floor:
                dji = floor
            upper = m[i, j] * np.sqrt(num[i, j] / dij)
            lower = m[j, i] * np.sqrt(num[j, i] / dji)
            val = 0.5 * (upper + lower)
            out[i, j] = val
            out[j, i] = val
    return out


def multiplicative_step_numpy(m, num, den, floor):
    out = m * np.sqrt(num / np.maximum(den, floor))
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 0.0)
    return out


# --------------------------------------------------------------------------
# ML-kNN neighbour statistics
# --------------------------------------------------------------------------

@njit
def neighbor_label_counts_numba(neighbors, labels):
    n, k = neighbors.shape
    c = labels.shape[1]
    out = np.zeros((n, c), dtype=np.int64)
    for i in range(n):
        for t in range(k):
            row = neighbors[i, t]
            for j in range(c):
                out[i, j] += labels[row, j]
    return out


def neighbor_label_counts_numpy(neighbors, labels):
    return labels[neighbors].sum(axis=1).astype(np.int64)


@njit
def count_histograms_numba(counts, labels, k):
    n, c = counts.shape
    pos = np.zeros((c, k + 1), dtype=np.int64)
    neg = np.zeros((c, k + 1), dtype=np.int64)
    for i in range(n):
        for j in range(c):
            if labels[i, j] == 1:
                pos[j, counts[i, j]] += 1
            else:
                neg[j, counts[i, j]] += 1
    return pos, neg


def count_histograms_numpy(counts, labels, k):
    c = counts.shape[1]
    pos = np.zeros((c, k + 1), dtype=np.int64)
    neg = np.zeros((c, k + 1), dtype=np.int64)
    for j in range(c):
        is_pos = labels[:, j] == 1
        pos[j] = np.bincount(counts[is_pos, j], minlength=k + 1)
        neg[j] = np.bincount(counts[~is_pos, j], minlength=k + 1)
    return pos, neg


# --------------------------------------------------------------------------
# per-sample ranking metrics; NaN marks a sample the metric cannot score
# --------------------------------------------------------------------------

@njit
def ranking_loss_rows_numba(scores, truth):
    m, c = scores.shape
    out = np.empty(m)
    for i in range(m):
        npos = 0
        for j in range(c):
            npos += truth[i, j]
        nneg = c - npos
        if npos == 0 or nneg == 0:
            out[i] = np.nan
            continue
        bad = 0
        for p in range(c):
            if truth[i, p] != 1:
                continue
            for q in range(c):
                if truth[i, q] == 0 and scores[i, p] <= scores[i, q]:
                    bad += 1
        out[i] = bad / (npos * nneg)
    return out


def ranking_loss_rows_numpy(scores, truth):
    pos = truth == 1
    npos = pos.sum(axis=1)
    nneg = truth.shape[1] - npos
    # pair (p, q) is a violation when p positive, q negative, s_p <= s_q
    viol = (scores[:, :, None] <= scores[:, None, :]) & pos[:, :, None] & ~pos[:, None, :]
    bad = viol.sum(axis=(1, 2)).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = bad / (npos * nneg)
    out[(npos == 0) | (nneg == 0)] = np.nan
    return out


@njit
def average_precision_rows_numba(scores, truth):
    m, c = scores.shape
    out = np.empty(m)
    rank = np.empty(c, dtype=np.int64)
    for i in range(m):
        npos = 0
        for j in range(c):
            npos += truth[i, j]
        if npos == 0:
            out[i] = np.nan
            continue
        # 1-based rank; equal scores ordered by label index
        for j in range(c):
            r = 1
            for q in range(c):
                if scores[i, q] > scores[i, j] or (scores[i, q] == scores[i, j] and q < j):
                    r += 1
            rank[j] = r
        acc = 0.0
        for j in range(c):
            if truth[i, j] != 1:
                continue
            hits = 0
            for q in range(c):
                if truth[i, q] == 1 and rank[q] <= rank[j]:
                    hits += 1
            acc += hits / rank[j]
        out[i] = acc / npos
    return out


def average_precision_rows_numpy(scores, truth):
    c = scores.shape[1]
    pos = truth == 1
    idx = np.arange(c)
    ahead = (scores[:, None, :] > scores[:, :, None]) | (
        (scores[:, None, :] == scores[:, :, None]) & (idx[None, :] < idx[:, None])[None]
    )
    rank = 1 + ahead.sum(axis=2)
    hits = ((rank[:, None, :] <= rank[:, :, None]) & pos[:, None, :]).sum(axis=2)
    npos = pos.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(pos, hits / rank, 0.0).sum(axis=1) / npos
    out[npos == 0] = np.nan
    return out


if USE_NUMBA:
    pairwise_sq_dists = pairwise_sq_dists_numba
    multiplicative_step = multiplicative_step_numba
    neighbor_label_counts = neighbor_label_counts_numba
    count_histograms = count_histograms_numba
    ranking_loss_rows = ranking_loss_rows_numba
    average_precision_rows = average_precision_rows_numba
else:
    pairwise_sq_dists = pairwise_sq_dists_numpy
    multiplicative_step = multiplicative_step_numpy
    neighbor_label_counts = neighbor_label_counts_numpy
    count_histograms = count_histograms_numpy
    ranking_loss_rows = ranking_loss_rows_numpy
    average_precision_rows = average_precision_rows_numpy
