"""Alternating minimisation for semi-supervised multi-label feature selection.

The objective over (W, b, F, M, Q) is

    ||X^T W + 1 b^T - F||^2 + alpha ||X^T W - Q P||^2
        + beta (||M F - F||^2 + ||M Q - Q||^2) + gamma (||W||_{2,1} + ||M||_1)

with ``P = Q^T X^T W`` substituted, ``Q^T Q = I``, ``0 <= F <= 1``, the
labeled rows of ``F`` pinned to the ground truth and ``M`` symmetric,
nonnegative with zero diagonal.  Each iteration runs D -> C -> Q -> W -> b
-> F -> (A+-, B+-) -> M.
"""

from __future__ import annotations

import logging
import math
import warnings
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .data import Dataset, SemiSplit
from .graph import AUTO, SparseGraph, build_splits, init_graph, update_graph
from .subspace import build_c_matrix, update_q

log = logging.getLogger(__name__)

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None


class IllConditionedError(RuntimeError):
    pass


@dataclass(frozen=True)
class SgmfsConfig:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    lsd: Optional[int] = None  # None -> ceil(c / 2)
    max_iters: int = 100
    tol: float = 1e-5
    epsilon_d: float = 1e-12
    seed: int = 0
    sigma: object = AUTO
    legacy_c: bool = False  # drop alpha from the Q-step matrix
    literal_order: bool = False  # W step uses the previous iteration's Q
    f_guard: bool = True  # keep the F step a descent step
    deterministic: bool = True  # pin BLAS to one thread inside fit

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "tol", "epsilon_d"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a positive finite number, got {value!r}")
        if self.lsd is not None and (int(self.lsd) != self.lsd or self.lsd < 1):
            raise ValueError(f"lsd must be a positive integer, got {self.lsd!r}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters!r}")

    def resolve_lsd(self, n_samples, n_labels):
        lsd = math.ceil(n_labels / 2) if self.lsd is None else int(self.lsd)
        limit = min(n_samples, n_labels)
        if lsd > limit:
            raise ValueError(f"lsd={lsd} exceeds min(n, c)={limit}")
        return lsd

    def to_dict(self):
        out = asdict(self)
        out["sigma"] = self.sigma if self.sigma == AUTO else float(self.sigma)
        return out


@dataclass
class SolverState:
    w: np.ndarray
    b: np.ndarray
    f: np.ndarray
    m: SparseGraph
    q: np.ndarray
    iteration: int = 0
    objective_trace: list = field(default_factory=list)
    converged: bool = False


@dataclass(frozen=True)
class FeatureRanking:
    scores: np.ndarray
    order: np.ndarray

    @classmethod
    def from_weights(cls, w):
        scores = np.linalg.norm(np.asarray(w, dtype=float), axis=1)
        order = np.argsort(-scores, kind="stable")
        return cls(scores=scores, order=order)


# --------------------------------------------------------------------------
# block updates
# --------------------------------------------------------------------------

def compute_d(w, epsilon_d):
    """Reweighting diagonal ``1 / (2 sqrt(||W_i||^2 + eps))`` for the l2,1 term."""
    if not epsilon_d > 0:
        raise ValueError("epsilon_d must be positive")
    sq = np.einsum("ij,ij->i", w, w)
    return 0.5 / np.sqrt(sq + epsilon_d)


def _apply_h(h_centering, a):
    """``H @ a`` for the centring matrix (implicit) or an explicit ``n x n`` H."""
    if h_centering is None or h_centering is True:
        return a - a.mean(axis=0, keepdims=True)
    return np.asarray(h_centering, dtype=float) @ a


def _guarded_solve(a, rhs, assume_a):
    # LAPACK's reciprocal-condition estimate flags near-singular systems
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            return sla.solve(a, rhs, assume_a=assume_a, check_finite=True)
    except (np.linalg.LinAlgError, sla.LinAlgWarning, ValueError) as exc:
        raise IllConditionedError("ill-conditioned W system; increase gamma") from exc


def _w_direct(x, h_centering, f, q, d_vec, alpha, gamma):
    xh = _apply_h(h_centering, x.T).T
    xq = x @ q
    system = xh @ x.T + alpha * (x @ x.T - xq @ xq.T)
    system = 0.5 * (system + system.T)
    system[np.diag_indices_from(system)] += gamma * d_vec
    return _guarded_solve(system, xh @ f, assume_a="pos")


def _w_woodbury(x, h_centering, f, q, d_vec, alpha, gamma):
    # (gD + X G X^T)^{-1} X H F = (gD)^{-1} X (I + G X^T (gD)^{-1} X)^{-1} H F,
    # G = H + alpha (I - Q Q^T); only n x n systems are formed.
    n = x.shape[1]
    inv_diag = 1.0 / (gamma * d_vec)
    xd = x * inv_diag[:, None]
    gram = x.T @ xd
    gk = _apply_h(h_centering, gram) + alpha * (gram - q @ (q.T @ gram))
    gk[np.diag_indices(n)] += 1.0
    return xd @ _guarded_solve(gk, _apply_h(h_centering, f), assume_a="gen")


def update_w(x, h_centering, f, q, d_vec, config, method="auto"):
    """Closed-form W step with the bias eliminated by centring.

    ``h_centering`` is ``None``/``True`` for the implicit centring matrix
    (row-mean subtraction) or an explicit ``n x n`` matrix.
    ``method="auto"`` factorises the d x d system when ``n >= d`` and uses the
    Woodbury route (n x n systems only) otherwise.
    """
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    d, n = x.shape
    if f.shape[0] != n or q.shape[0] != n or d_vec.shape != (d,):
        raise ValueError("update_w: inconsistent shapes")
    if method == "auto":
        method = "direct" if n >= d else "woodbury"
    if method == "direct":
        w = _w_direct(x, h_centering, f, q, d_vec, config.alpha, config.gamma)
    elif method == "woodbury":
        w = _w_woodbury(x, h_centering, f, q, d_vec, config.alpha, config.gamma)
    else:
        raise ValueError(f"unknown W solver {method!r}")
    if not np.all(np.isfinite(w)):
        raise IllConditionedError("ill-conditioned W system; increase gamma")
    return w


def w_system_residual(x, f, q, d_vec, w, config):
    """Max-abs residual of the W normal equation and the scale of its right-hand side."""
    xc = x - x.mean(axis=1, keepdims=True)
    xq = x @ q
    lhs = xc @ (xc.T @ w) + config.alpha * (x @ (x.T @ w) - xq @ (xq.T @ w)) + config.gamma * d_vec[:, None] * w
    rhs = xc @ f
    return float(np.abs(lhs - rhs).max()), float(np.abs(rhs).max())


def update_b(f, x, w):
    n = f.shape[0]
    return (f.sum(axis=0) - w.T @ x.sum(axis=1)) / n


def _f_system(x, w, b, m, beta):
    g = m.weights if isinstance(m, SparseGraph) else np.asarray(m, dtype=float)
    n = g.shape[0]
    r = g - np.eye(n)
    k = r.T @ r
    k *= beta
    k[np.diag_indices(n)] += 1.0
    k = 0.5 * (k + k.T)
    target = x.T @ w + b[None, :]
    return k, target


def update_f(x, w, b, m, beta, y_l, split):
    """Soft-label step: solve ``K F = X^T W + 1 b^T``, clamp, pin labeled rows."""
    k, target = _f_system(x, w, b, m, beta)
    return _clamped_solution(k, target, np.asarray(split.labeled_indices, dtype=int), y_l)


def _clamped_solution(k, target, labeled, y_l):
    f = sla.cho_solve(sla.cho_factor(k), target)
    np.clip(f, 0.0, 1.0, out=f)
    f[labeled] = y_l
    return f


def _f_block_value(f, k, target):
    # ||target - F||^2 + beta ||(M - I) F||^2 up to the constant ||target||^2
    return float(np.sum(f * (k @ f)) - 2.0 * np.sum(target * f))


def descend_f(candidate, previous, k, target, labeled, y_l, max_steps=50):
    """Return ``candidate`` if it does not raise the F-block objective.

    Otherwise take projected-gradient steps from ``previous`` (step ``1/L``
    with ``L`` a row-sum bound on the largest eigenvalue of ``K``), which
    cannot increase it.
    """
    start = _f_block_value(previous, k, target)
    if _f_block_value(candidate, k, target) <= start:
        return candidate
    lip = float(np.abs(k).sum(axis=1).max())
    f = previous.copy()
    value = start
    for _ in range(max_steps):
        step = f - (k @ f - target) / lip
        np.clip(step, 0.0, 1.0, out=step)
        step[labeled] = y_l
        new_value = _f_block_value(step, k, target)
        f = step
        if value - new_value <= 1e-12 * max(1.0, abs(value)):
            break
        value = new_value
    return f


# --------------------------------------------------------------------------
# objective
# --------------------------------------------------------------------------

def _objective_terms(w, b, f, m, q, x):
    g = m.weights if isinstance(m, SparseGraph) else np.asarray(m, dtype=float)
    xtw = x.T @ w
    fit = xtw + b[None, :] - f
    sub = xtw - q @ (q.T @ xtw)
    rf = g @ f - f
    rq = g @ q - q
    return {
        "regression": float(np.sum(fit * fit)),
        "subspace": float(np.sum(sub * sub)),
        "graph_f": float(np.sum(rf * rf)),
        "graph_q": float(np.sum(rq * rq)),
        "l21": float(np.linalg.norm(w, axis=1).sum()),
        "l1": float(np.abs(g).sum()),
    }


def objective(state, x, y_l, split, config):
    """Objective value with the true (unsmoothed) l2,1 norm.

    ``y_l`` and ``split`` are accepted for interface symmetry with the F step;
    the labeled rows are read from ``state.f``.
    """
    t = _objective_terms(state.w, state.b, state.f, state.m, state.q, np.asarray(x, dtype=float))
    return (
        t["regression"]
        + config.alpha * t["subspace"]
        + config.beta * (t["graph_f"] + t["graph_q"])
        + config.gamma * (t["l21"] + t["l1"])
    )


def surrogate_objective(state, x, config, d_vec):
    """The objective with ``||W||_{2,1}`` replaced by ``tr(W^T D W)``."""
    t = _objective_terms(state.w, state.b, state.f, state.m, state.q, np.asarray(x, dtype=float))
    quad = float(np.sum(d_vec[:, None] * state.w * state.w))
    return (
        t["regression"]
        + config.alpha * t["subspace"]
        + config.beta * (t["graph_f"] + t["graph_q"])
        + config.gamma * (quad + t["l1"])
    )


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------

def _replace(state, **changes):
    fields = dict(
        w=state.w, b=state.b, f=state.f, m=state.m, q=state.q,
        iteration=state.iteration, objective_trace=state.objective_trace,
        converged=state.converged,
    )
    fields.update(changes)
    return SolverState(**fields)


def fit(
    dataset: Dataset,
    split: SemiSplit,
    config: SgmfsConfig = SgmfsConfig(),
    callback: Optional[Callable[[SolverState], None]] = None,
    block_log: Optional[list] = None,
):
    """Run the alternating minimisation and rank features by row norm of W.

    ``callback(state)`` is invoked after every iteration. If ``block_log`` is a
    list, one dict per iteration is appended holding the surrogate objective
    (at that iteration's D) before and after each block.
    """
    limiter = (
        threadpool_limits(limits=1)
        if config.deterministic and threadpool_limits is not None
        else nullcontext()
    )
    with limiter:
        return _fit(dataset, split, config, callback, block_log)


def _fit(dataset, split, config, callback, block_log):
    x = np.ascontiguousarray(dataset.features, dtype=float)
    d, n = x.shape
    c = dataset.n_labels
    if split.n_samples != n:
        raise ValueError(f"split covers {split.n_samples} samples, dataset has {n}")
    lsd = config.resolve_lsd(n, c)
    labeled = np.asarray(split.labeled_indices, dtype=int)
    y_l = np.asarray(dataset.labels, dtype=float)[labeled]
    c_alpha = 1.0 if config.legacy_c else config.alpha

    rng = np.random.default_rng(config.seed)
    w = rng.normal(0.0, 0.1, size=(d, c))
    m = init_graph(x, config.sigma)
    f = np.zeros((n, c))
    f[labeled] = y_l
    b = update_b(f, x, w)
    q = update_q(build_c_matrix(x, w, m, config.beta, alpha=c_alpha), lsd)
    state = SolverState(w=w, b=b, f=f, m=m, q=q)
    state.objective_trace.append(objective(state, x, y_l, split, config))
    q_prev = q

    for it in range(1, config.max_iters + 1):
        d_vec = compute_d(state.w, config.epsilon_d)
        blocks = {} if block_log is not None else None

        def note(name, st):
            if blocks is not None:
                blocks[name] = surrogate_objective(st, x, config, d_vec)

        note("start", state)
        if it == 1:
            q_new = state.q  # W and M are unchanged since q was computed
        else:
            q_new = update_q(build_c_matrix(x, state.w, state.m, config.beta, alpha=c_alpha), lsd)
        state = _replace(state, q=q_new)
        note("q", state)

        q_for_w = q_prev if config.literal_order else q_new
        w = update_w(x, None, state.f, q_for_w, d_vec, config)
        b = update_b(state.f, x, w)
        state = _replace(state, w=w, b=b)
        note("wb", state)

        k, target = _f_system(x, w, b, state.m, config.beta)
        f_new = _clamped_solution(k, target, labeled, y_l)
        if config.f_guard:
            f_new = descend_f(f_new, state.f, k, target, labeled, y_l)
        state = _replace(state, f=f_new)
        note("f", state)

        splits = build_splits(state.f, q_new, config.gamma, config.beta)
        state = _replace(state, m=update_graph(state.m, splits))
        note("m", state)

        q_prev = q_new
        value = objective(state, x, y_l, split, config)
        prev_value = state.objective_trace[-1]
        state.objective_trace.append(value)
        state.iteration = it
        if blocks is not None:
            block_log.append(blocks)
        if callback is not None:
            callback(state)
        change = abs(prev_value - value) / max(prev_value, 1e-12)
        log.debug("iter %d objective %.10g rel change %.3g", it, value, change)
        if change < config.tol:
            state.converged = True
            break

    return state, FeatureRanking.from_weights(state.w)


def select_features(ranking, proportion):
    """Top ``ceil(proportion * d)`` feature indices in ranking order."""
    if not 0 < proportion <= 1:
        raise ValueError(f"proportion must be in (0, 1], got {proportion}")
    d = len(ranking.order)
    count = max(1, math.ceil(proportion * d - 1e-9))
    return [int(i) for i in ranking.order[:count]]
