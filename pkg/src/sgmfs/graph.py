"""Sample graph: Gaussian-kernel initialisation and the multiplicative sparse update.

With ``F`` (soft labels) and ``Q`` (shared labels) fixed, the graph block
minimises

    beta * (||M F - F||^2 + ||M Q - Q||^2) + gamma * ||M||_1

over symmetric, nonnegative, zero-diagonal ``M``.  Dividing by ``beta`` and
dropping constants gives ``J(M) = tr(M A M^T) - 2 tr(B M^T)`` with
``A = F F^T + Q Q^T`` and ``B = A - (gamma / 2 beta) E``; the update rescales
each entry by the square root of a ratio of the nonnegative parts of its
gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

AUTO = "auto"
DENOMINATOR_FLOOR = 1e-12


@dataclass(frozen=True)
class SparseGraph:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, copy=True)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"graph weights must be square, got shape {w.shape}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return self.weights.shape[0]


@dataclass(frozen=True)
class SplitPair:
    """Nonnegative parts with ``A = a_plus - a_minus`` and ``B = b_plus - b_minus``."""

    a_plus: np.ndarray
    a_minus: np.ndarray
    b_plus: np.ndarray
    b_minus: np.ndarray

    @property
    def a(self):
        return self.a_plus - self.a_minus

    @property
    def b(self):
        return self.b_plus - self.b_minus


def init_graph(features, sigma=AUTO):
    """Full Gaussian kernel over all sample pairs, zero diagonal.

    ``features`` is d x n. With ``sigma="auto"`` the bandwidth is the mean
    pairwise Euclidean distance.
    """
    x = np.asarray(features, dtype=float)
    n = x.shape[1]
    if n < 2:
        raise ValueError("need at least two samples to build a graph")
    pts = np.ascontiguousarray(x.T)
    sq = kernels.pairwise_sq_dists(pts, pts)
    sq = 0.5 * (sq + sq.T)
    np.fill_diagonal(sq, 0.0)
    if sigma == AUTO or sigma is None:
        iu = np.triu_indices(n, 1)
        sigma = float(np.sqrt(np.maximum(sq[iu], 0.0)).mean())
        if not sigma > 0:
            raise ValueError("degenerate kernel bandwidth: all samples are identical")
    elif not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    m = np.exp(-sq / sigma**2)
    m = 0.5 * (m + m.T)
    np.fill_diagonal(m, 0.0)
    return SparseGraph(m)


def build_splits(f, q, gamma, beta):
    if not beta > 0:
        raise ValueError("beta must be positive for graph update")
    f = np.asarray(f, dtype=float)
    q = np.asarray(q, dtype=float)
    qq = q @ q.T
    qq = 0.5 * (qq + qq.T)
    ff = f @ f.T
    ff = 0.5 * (ff + ff.T)
    qq_pos = 0.5 * (np.abs(qq) + qq)
    qq_neg = 0.5 * (np.abs(qq) - qq)
    a_plus = ff + qq_pos
    b_minus = qq_neg + gamma / (2.0 * beta)
    return SplitPair(a_plus=a_plus, a_minus=qq_neg, b_plus=a_plus.copy(), b_minus=b_minus)


def update_graph(m, splits):
    """One multiplicative step. Zero entries (including the diagonal) stay zero."""
    w = m.weights if isinstance(m, SparseGraph) else np.asarray(m, dtype=float)
    ma_minus = w @ splits.a_minus
    ma_plus = w @ splits.a_plus
    # M and A are symmetric, so A M = (M A)^T
    num = ma_minus + ma_minus.T + 2.0 * splits.b_plus
    den = ma_plus + ma_plus.T + 2.0 * splits.b_minus
    out = kernels.multiplicative_step(np.ascontiguousarray(w), num, den, DENOMINATOR_FLOOR)
    return SparseGraph(out)


def graph_objective(m, f, q, gamma, beta):
    w = m.weights if isinstance(m, SparseGraph) else np.asarray(m, dtype=float)
    rf = w @ f - f
    rq = w @ q - q
    return float(beta * (np.sum(rf * rf) + np.sum(rq * rq)) + gamma * np.abs(w).sum())


def split_objective(m, splits):
    """``tr(M A M^T) - 2 tr(B M^T)`` evaluated from the split matrices."""
    w = m.weights if isinstance(m, SparseGraph) else np.asarray(m, dtype=float)
    return float(np.sum((w @ splits.a) * w) - 2.0 * np.sum(splits.b * w))


def graph_gradient(m, splits):
    """Symmetric gradient ``(M A + A M) - 2 B`` of :func:`split_objective`."""
    w = m.weights if isinstance(m, SparseGraph) else np.asarray(m, dtype=float)
    ma = w @ splits.a
    return ma + ma.T - 2.0 * splits.b


def kkt_residual(m, splits):
    """Complementary-slackness residual ``max |M_ij * dJ/dM_ij|`` off the diagonal."""
    w = m.weights if isinstance(m, SparseGraph) else np.asarray(m, dtype=float)
    prod = np.abs(w * graph_gradient(w, splits))
    np.fill_diagonal(prod, 0.0)
    return float(prod.max())


def dump_graph_csv(m, path):
    w = m.weights if isinstance(m, SparseGraph) else np.asarray(m, dtype=float)
    np.savetxt(path, w, delimiter=",", fmt="%.17g")
