"""ML-kNN and the multi-label metrics used to score a feature ranking.

Everything in this module is sample-major (rows are samples), unlike the
solver, which works on features x samples.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from . import kernels
from .data import Dataset, make_split, standardize
from .solver import SgmfsConfig, fit, select_features

METRICS = ("hamming_loss", "ranking_loss", "macro_f1", "micro_f1", "average_precision")


@dataclass(frozen=True)
class MlknnModel:
    k: int
    smoothing: float
    priors: np.ndarray  # c
    post_pos: np.ndarray  # c x (k+1), P(E_j | H1)
    post_neg: np.ndarray  # c x (k+1), P(E_j | H0)
    train_x: np.ndarray  # n x p
    train_y: np.ndarray  # n x c, int64

    @property
    def n_features(self):
        return self.train_x.shape[1]


def _binary(a, name):
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D")
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{name} must be binary")
    return a.astype(np.int64)


def _nearest(dist, k, exclude_self):
    if exclude_self:
        np.fill_diagonal(dist, np.inf)
    # stable sort keeps equal distances in ascending sample order
    return np.argsort(dist, axis=1, kind="stable")[:, :k].astype(np.int64)


def mlknn_fit(train_x, train_y, k=10, s=1.0):
    x = np.ascontiguousarray(train_x, dtype=float)
    y = _binary(train_y, "train_y")
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("train_x and train_y must have the same number of rows")
    n = x.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k must be in [1, n_train); got k={k}, n_train={n}")
    if s <= 0:
        raise ValueError("smoothing must be positive")
    priors = (s + y.sum(axis=0)) / (2 * s + n)
    nbrs = _nearest(kernels.pairwise_sq_dists(x, x), k, exclude_self=True)
    counts = kernels.neighbor_label_counts(nbrs, y)
    pos, neg = kernels.count_histograms(counts, y, k)
    post_pos = (s + pos) / (s * (k + 1) + pos.sum(axis=1, keepdims=True))
    post_neg = (s + neg) / (s * (k + 1) + neg.sum(axis=1, keepdims=True))
    return MlknnModel(k, float(s), priors, post_pos, post_neg, x, y)


def mlknn_predict(model, test_x):
    """Posterior scores ``P(H1 | E)`` and MAP predictions (ties go to 0)."""
    x = np.ascontiguousarray(test_x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise ValueError(
            f"test_x has {x.shape[-1]} features, model was fit on {model.n_features}"
        )
    nbrs = _nearest(kernels.pairwise_sq_dists(x, model.train_x), model.k, exclude_self=False)
    counts = kernels.neighbor_label_counts(nbrs, model.train_y)
    labels = np.arange(counts.shape[1])
    p1 = model.priors * model.post_pos[labels, counts]
    p0 = (1.0 - model.priors) * model.post_neg[labels, counts]
    scores = p1 / (p1 + p0)
    return scores, (p1 > p0).astype(np.int64)


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def _pair(a, b, a_name, b_name):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{a_name} shape {np.shape(a)} != {b_name} shape {np.shape(b)}")


def hamming_loss(pred, truth):
    _pair(pred, truth, "pred", "truth")
    p, t = _binary(pred, "pred"), _binary(truth, "truth")
    return float(np.mean(p != t))


def ranking_loss(scores, truth):
    _pair(scores, truth, "scores", "truth")
    rows = kernels.ranking_loss_rows(np.asarray(scores, dtype=float), _binary(truth, "truth"))
    rows = rows[~np.isnan(rows)]
    if rows.size == 0:
        raise ValueError("ranking loss undefined: no sample has both positive and negative labels")
    return float(rows.mean())


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)


def macro_micro_f1(pred, truth):
    _pair(pred, truth, "pred", "truth")
    p, t = _binary(pred, "pred"), _binary(truth, "truth")
    tp = (p & t).sum(axis=0)
    fp = (p & (1 - t)).sum(axis=0)
    fn = ((1 - p) & t).sum(axis=0)
    macro = float(_f1(tp, fp, fn).mean())
    micro = float(_f1(tp.sum(), fp.sum(), fn.sum()))
    return macro, micro


def average_precision(scores, truth):
    _pair(scores, truth, "scores", "truth")
    rows = kernels.average_precision_rows(np.asarray(scores, dtype=float), _binary(truth, "truth"))
    rows = rows[~np.isnan(rows)]
    if rows.size == 0:
        raise ValueError("average precision undefined: no sample has a positive label")
    return float(rows.mean())


@dataclass(frozen=True)
class MetricReport:
    hamming_loss: float
    ranking_loss: float
    macro_f1: float
    micro_f1: float
    average_precision: float

    @classmethod
    def score(cls, scores, pred, truth):
        macro, micro = macro_micro_f1(pred, truth)
        return cls(
            hamming_loss=hamming_loss(pred, truth),
            ranking_loss=ranking_loss(scores, truth),
            macro_f1=macro,
            micro_f1=micro,
            average_precision=average_precision(scores, truth),
        )

    def as_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# end-to-end protocol
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProtocolSplit:
    """How each run carves the data: train/test sizes and the labeled share of train.

    ``train_size=None`` uses 80% of the samples; ``test_size=None`` uses the rest.
    """

    labeled_fraction: float
    train_size: int | None = None
    test_size: int | None = None

    def sizes(self, n):
        n_train = self.train_size if self.train_size is not None else math.ceil(0.8 * n)
        n_test = self.test_size if self.test_size is not None else n - n_train
        if n_train < 2 or n_test < 1 or n_train + n_test > n:
            raise ValueError(f"cannot draw {n_train} train + {n_test} test from {n} samples")
        return n_train, n_test


# train/test counts used for the published benchmark tables
TABLE_SIZES = {
    "emotions": (400, 100),
    "scene": (1000, 500),
    "yeast": (1500, 500),
    "plant": (685, 293),
}


@dataclass(frozen=True)
class ProportionSummary:
    proportion: float
    mean: MetricReport
    std: MetricReport
    runs: int


def _one_run(dataset, protocol, config, proportions, seed, k, s):
    n = dataset.n_samples
    n_train, n_test = protocol.sizes(n)
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:n_train + n_test])
    train, stats = standardize(dataset.subset(train_idx))
    test_x = stats.apply(dataset.features[:, test_idx])
    test_y = dataset.labels[test_idx]
    semi = make_split(train, protocol.labeled_fraction, seed)
    _, ranking = fit(train, semi, replace(config, seed=seed))
    reports = []
    for p in proportions:
        cols = select_features(ranking, p)
        model = mlknn_fit(train.features[cols].T, train.labels, k, s)
        scores, pred = mlknn_predict(model, test_x[cols].T)
        reports.append(MetricReport.score(scores, pred, test_y))
    return reports


def _summarise(per_run, proportions):
    out = []
    for j, p in enumerate(proportions):
        table = np.array([[getattr(run[j], m) for m in METRICS] for run in per_run])
        mean = MetricReport(*table.mean(axis=0).tolist())
        std = MetricReport(*table.std(axis=0).tolist())
        out.append(ProportionSummary(float(p), mean, std, len(per_run)))
    return out


def worker_count():
    """Process workers for sweeps, capped by ``SGMFS_THREADS`` (default 1)."""
    raw = os.environ.get("SGMFS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def evaluate_pipeline(
    dataset: Dataset,
    split,
    config: SgmfsConfig,
    proportions: Sequence[float],
    runs: int,
    seed: int,
    k: int = 10,
    s: float = 1.0,
    workers: int | None = None,
):
    """Select features with the solver, classify with ML-kNN, and score.

    ``split`` is a :class:`ProtocolSplit` or a bare labeled fraction. Run ``r``
    draws its train/test partition, labeled subset and W initialisation from
    ``seed + r``; the scaler is fit on the training part only. ML-kNN is
    trained on every training sample with its true labels. Returns one
    :class:`ProportionSummary` (mean and population std over runs) per
    proportion, in input order.
    """
    protocol = split if isinstance(split, ProtocolSplit) else ProtocolSplit(float(split))
    proportions = [float(p) for p in proportions]
    if not proportions or any(not 0 < p <= 1 for p in proportions):
        raise ValueError("proportions must be non-empty and lie in (0, 1]")
    if runs < 1:
        raise ValueError("runs must be at least 1")
    args = [(dataset, protocol, config, proportions, seed + r, k, s) for r in range(runs)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and runs > 1:
        with ProcessPoolExecutor(max_workers=min(workers, runs)) as pool:
            per_run = list(pool.map(_one_run, *zip(*args)))
    else:
        per_run = [_one_run(*a) for a in args]
    return _summarise(per_run, proportions)
