"""Shared label subspace: the orthonormal ``Q`` block and its projection ``P``."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .graph import SparseGraph

SIGN_TOL = 1e-10


def build_c_matrix(x, w, m, beta, alpha=1.0):
    """``alpha * X^T W W^T X - beta * (M - I)^T (M - I)``, symmetrised.

    Pass ``alpha=1`` to get the matrix exactly as written without the
    regression weight (the ``--legacy-c`` behaviour).
    """
    x = np.asarray(x, dtype=float)
    g = m.weights if isinstance(m, SparseGraph) else np.asarray(m, dtype=float)
    xtw = x.T @ np.asarray(w, dtype=float)
    r = g - np.eye(g.shape[0])
    c = alpha * (xtw @ xtw.T) - beta * (r.T @ r)
    return 0.5 * (c + c.T)


def update_q(c_matrix, lsd):
    """Top-``lsd`` eigenvectors of a symmetric matrix, deterministic signs.

    Columns come out in descending eigenvalue order; equal eigenvalues keep
    the solver's (ascending) order, and each column is flipped so its first
    entry larger than ``SIGN_TOL`` in magnitude is positive.
    """
    c = np.asarray(c_matrix, dtype=float)
    n = c.shape[0]
    if not 1 <= lsd <= n:
        raise ValueError(f"lsd must be in [1, {n}], got {lsd}")
    vals, vecs = sla.eigh(c, subset_by_index=[n - lsd, n - 1], driver="evr")
    order = np.argsort(-vals, kind="stable")
    q = vecs[:, order]
    for j in range(lsd):
        col = q[:, j]
        big = np.flatnonzero(np.abs(col) > SIGN_TOL)
        if big.size and col[big[0]] < 0:
            q[:, j] = -col
    return q


def compute_p(q, x, w):
    """Least-squares projection ``Q^T X^T W``."""
    return np.asarray(q, dtype=float).T @ (np.asarray(x, dtype=float).T @ np.asarray(w, dtype=float))


def subspace_objective(q, x, w, m, beta, alpha=1.0):
    """``alpha ||X^T W - Q Q^T X^T W||^2 + beta ||M Q - Q||^2``."""
    g = m.weights if isinstance(m, SparseGraph) else np.asarray(m, dtype=float)
    xtw = np.asarray(x, dtype=float).T @ np.asarray(w, dtype=float)
    resid = xtw - q @ (q.T @ xtw)
    rq = g @ q - q
    return float(alpha * np.sum(resid * resid) + beta * np.sum(rq * rq))
