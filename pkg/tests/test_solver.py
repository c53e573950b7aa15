import math

import numpy as np
import pytest

from sgmfs.data import Dataset, SemiSplit, make_split
from sgmfs.graph import SparseGraph
from sgmfs.solver import (
    FeatureRanking,
    IllConditionedError,
    SgmfsConfig,
    SolverState,
    compute_d,
    descend_f,
    fit,
    objective,
    select_features,
    update_b,
    update_f,
    update_w,
    w_system_residual,
)

from conftest import planted


def _problem(rng, d, n, c=3, lsd=2):
    x = rng.normal(size=(d, n))
    f = rng.random((n, c))
    q, _ = np.linalg.qr(rng.normal(size=(n, lsd)))
    d_vec = compute_d(rng.normal(size=(d, c)), 1e-12)
    return x, f, q, d_vec


class TestConfig:
    def test_defaults(self):
        cfg = SgmfsConfig()
        assert (cfg.alpha, cfg.beta, cfg.gamma, cfg.max_iters, cfg.tol, cfg.epsilon_d) == (
            1.0, 1.0, 1.0, 100, 1e-5, 1e-12
        )
        assert cfg.resolve_lsd(50, 6) == 3
        assert cfg.resolve_lsd(50, 7) == 4

    @pytest.mark.parametrize("kw", [{"alpha": 0}, {"gamma": -1}, {"lsd": 0}, {"max_iters": 0}, {"tol": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SgmfsConfig(**kw)

    def test_lsd_bound(self):
        with pytest.raises(ValueError, match="exceeds"):
            SgmfsConfig(lsd=5).resolve_lsd(100, 4)


class TestComputeD:
    def test_examples(self):
        assert compute_d(np.array([[3.0, 4.0]]), 1e-30)[0] == pytest.approx(0.1)
        assert compute_d(np.zeros((1, 3)), 1e-12)[0] == pytest.approx(5e5)

    def test_smoothing_error_bound(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(20, 4))
        eps = 1e-6
        exact = 1 / (2 * np.linalg.norm(w, axis=1))
        rel = np.abs(compute_d(w, eps) - exact) / exact
        assert np.all(rel <= eps / (2 * np.sum(w * w, axis=1)) + 1e-15)

    def test_positive_epsilon(self):
        with pytest.raises(ValueError):
            compute_d(np.ones((2, 2)), 0.0)


class TestUpdateW:
    def test_zero_rhs(self):
        rng = np.random.default_rng(1)
        x, _, q, d_vec = _problem(rng, 8, 12)
        assert not update_w(x, None, np.zeros((12, 3)), q, d_vec, SgmfsConfig()).any()

    @pytest.mark.parametrize("d, n", [(10, 40), (50, 20), (30, 30)])
    def test_stationarity(self, d, n):
        rng = np.random.default_rng(d + n)
        x, f, q, d_vec = _problem(rng, d, n)
        cfg = SgmfsConfig(alpha=0.7, gamma=1.3)
        w = update_w(x, None, f, q, d_vec, cfg)
        resid, scale = w_system_residual(x, f, q, d_vec, w, cfg)
        assert resid <= 1e-8 * scale

    def test_paths_agree(self):
        rng = np.random.default_rng(2)
        x, f, q, d_vec = _problem(rng, 50, 20)
        cfg = SgmfsConfig()
        a = update_w(x, None, f, q, d_vec, cfg, method="direct")
        b = update_w(x, None, f, q, d_vec, cfg, method="woodbury")
        assert np.abs(a - b).max() <= 1e-6 * np.abs(a).max()

    def test_explicit_h_matches_implicit(self):
        rng = np.random.default_rng(3)
        x, f, q, d_vec = _problem(rng, 6, 15)
        h = np.eye(15) - 1.0 / 15
        cfg = SgmfsConfig()
        np.testing.assert_allclose(
            update_w(x, h, f, q, d_vec, cfg), update_w(x, None, f, q, d_vec, cfg), atol=1e-12
        )

    @pytest.mark.parametrize("method", ["direct", "woodbury"])
    def test_ill_conditioned(self, method):
        rng = np.random.default_rng(4)
        x, f, q, _ = _problem(rng, 50, 20)
        cfg = SgmfsConfig(alpha=1e-300, gamma=1e-300)
        with pytest.raises(IllConditionedError, match="ill-conditioned W system; increase gamma"):
            update_w(x, None, f, q, np.ones(50), cfg, method=method)


class TestUpdateB:
    def test_examples(self):
        assert not update_b(np.zeros((3, 2)), np.ones((4, 3)), np.zeros((4, 2))).any()
        np.testing.assert_allclose(
            update_b(np.eye(2), np.ones((3, 2)), np.zeros((3, 2))), [0.5, 0.5]
        )

    def test_gradient_zero(self):
        rng = np.random.default_rng(5)
        x, f = rng.normal(size=(4, 9)), rng.random((9, 3))
        w = rng.normal(size=(4, 3))
        b = update_b(f, x, w)

        def loss(bb):
            r = x.T @ w + bb[None, :] - f
            return np.sum(r * r)

        h = 1e-5
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            assert abs((loss(b + e) - loss(b - e)) / (2 * h)) <= 1e-6


class TestUpdateF:
    def _setup(self, target_rows):
        # x = I (d = n), w picks out the desired raw values, b = 0, beta = 0 -> K = I
        n = len(target_rows)
        x = np.eye(n)
        w = np.array(target_rows, dtype=float)
        return x, w, np.zeros(w.shape[1])

    def test_clamp_rules(self):
        x, w, b = self._setup([[1.0, 0.0], [1.7, -0.3], [0.4, 0.6]])
        split = SemiSplit((0,), (1, 2), 0)
        f = update_f(x, w, b, SparseGraph(np.zeros((3, 3))), 0.0, np.array([[0.0, 1.0]]), split)
        np.testing.assert_array_equal(f, [[0, 1], [1, 0], [0.4, 0.6]])

    def test_identity_system(self):
        rng = np.random.default_rng(6)
        x, w = rng.normal(size=(3, 5)), rng.normal(size=(3, 2)) * 0.1
        b = np.array([0.5, 0.5])
        split = SemiSplit((0,), (1, 2, 3, 4), 0)
        f = update_f(x, w, b, np.zeros((5, 5)), 0.0, np.array([[1.0, 0.0]]), split)
        np.testing.assert_allclose(f[1:], np.clip((x.T @ w + b)[1:], 0, 1), atol=1e-14)

    def test_descend_f_never_increases(self):
        rng = np.random.default_rng(7)
        n, c = 12, 2
        m = rng.random((n, n))
        m = 0.5 * (m + m.T)
        np.fill_diagonal(m, 0)
        r = m - np.eye(n)
        k = np.eye(n) + 2.0 * r.T @ r
        target = rng.normal(size=(n, c))
        labeled = np.array([0, 1])
        y_l = np.array([[1.0, 0.0], [0.0, 1.0]])
        prev = rng.random((n, c))
        prev[labeled] = y_l
        bad = np.ones((n, c))
        bad[labeled] = y_l

        def value(f):
            return np.sum((target - f) ** 2) + 2.0 * np.sum((r @ f) ** 2)

        out = descend_f(bad, prev, k, target, labeled, y_l)
        assert value(out) <= value(prev) + 1e-12
        assert out.min() >= 0 and out.max() <= 1
        np.testing.assert_array_equal(out[labeled], y_l)


class TestObjective:
    def _state(self, n, c, lsd, f, q=None):
        q = np.zeros((n, lsd)) if q is None else q
        return SolverState(
            w=np.zeros((3, c)), b=np.zeros(c), f=f, m=SparseGraph(np.zeros((n, n))), q=q
        )

    def test_all_zero(self):
        st = self._state(4, 2, 1, np.zeros((4, 2)))
        assert objective(st, np.ones((3, 4)), np.zeros((1, 2)), SemiSplit((0,), (1, 2, 3), 0), SgmfsConfig()) == 0

    def test_labeled_ones(self):
        n, c, lsd, beta = 6, 3, 2, 0.7
        f = np.zeros((n, c))
        f[0, 0] = f[1, 2] = f[2, 1] = 1.0
        q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(n, lsd)))
        st = self._state(n, c, lsd, f, q)
        cfg = SgmfsConfig(beta=beta)
        got = objective(st, np.ones((3, n)), f[:3], SemiSplit((0, 1, 2), (3, 4, 5), 0), cfg)
        assert got == pytest.approx(3 * (1 + beta) + beta * lsd, rel=1e-12)

    def test_summation_oracle(self):
        rng = np.random.default_rng(8)
        d, n, c, lsd = 4, 5, 3, 2
        x = rng.normal(size=(d, n))
        w, b, f = rng.normal(size=(d, c)), rng.normal(size=c), rng.random((n, c))
        m = rng.random((n, n))
        q, _ = np.linalg.qr(rng.normal(size=(n, lsd)))
        cfg = SgmfsConfig(alpha=0.3, beta=1.9, gamma=0.6)
        st = SolverState(w=w, b=b, f=f, m=SparseGraph(m), q=q)
        xtw = [[sum(x[k, i] * w[k, j] for k in range(d)) for j in range(c)] for i in range(n)]
        p = [[sum(q[i, a] * xtw[i][j] for i in range(n)) for j in range(c)] for a in range(lsd)]
        total = 0.0
        for i in range(n):
            for j in range(c):
                total += (xtw[i][j] + b[j] - f[i, j]) ** 2
                qp = sum(q[i, a] * p[a][j] for a in range(lsd))
                total += cfg.alpha * (xtw[i][j] - qp) ** 2
                total += cfg.beta * (sum(m[i, k] * f[k, j] for k in range(n)) - f[i, j]) ** 2
            for a in range(lsd):
                total += cfg.beta * (sum(m[i, k] * q[k, a] for k in range(n)) - q[i, a]) ** 2
        total += cfg.gamma * sum(math.sqrt(sum(w[k, j] ** 2 for j in range(c))) for k in range(d))
        total += cfg.gamma * sum(abs(m[i, k]) for i in range(n) for k in range(n))
        got = objective(st, x, f[:1], SemiSplit((0,), (1, 2, 3, 4), 0), cfg)
        assert got == pytest.approx(total, rel=1e-10)


@pytest.fixture(scope="module")
def run():
    ds = planted(n=50, d=12, c=4, seed=2)
    split = make_split(ds, 0.2, 0)
    seen = []
    blocks = []

    def keep(state):
        seen.append((state.f.copy(), np.array(state.m.weights), state.q.copy()))

    state, ranking = fit(ds, split, SgmfsConfig(max_iters=40), callback=keep, block_log=blocks)
    return ds, split, state, ranking, seen, blocks


class TestFit:
    def test_trace_monotone(self, run):
        trace = np.array(run[2].objective_trace)
        assert np.all(trace[1:] <= trace[:-1] * (1 + 1e-7))
        assert np.all(np.isfinite(trace))

    def test_constraints_every_iteration(self, run):
        ds, split, state, _, seen, _ = run
        lab = list(split.labeled_indices)
        assert len(seen) == state.iteration
        for f, m, q in seen:
            assert f.min() >= 0 and f.max() <= 1
            assert np.array_equal(f[lab], ds.labels[lab])
            assert np.array_equal(m, m.T) and m.min() >= 0 and not np.diag(m).any()
            assert np.abs(q.T @ q - np.eye(q.shape[1])).max() <= 1e-8

    def test_blocks_descend(self, run):
        for entry in run[5]:
            seq = [entry[k] for k in ("start", "q", "wb", "f", "m")]
            for before, after in zip(seq, seq[1:]):
                assert after <= before + 1e-9 * abs(before)

    def test_ranking(self, run):
        ranking = run[3]
        assert sorted(ranking.order.tolist()) == list(range(12))
        assert np.all(ranking.scores >= 0)
        np.testing.assert_allclose(ranking.scores, np.linalg.norm(run[2].w, axis=1))

    def test_deterministic(self, run):
        ds, split = run[0], run[1]
        _, again = fit(ds, split, SgmfsConfig(max_iters=40))
        assert np.array_equal(again.order, run[3].order)
        assert np.array_equal(again.scores, run[3].scores)

    @pytest.mark.parametrize("kw", [{"literal_order": True}, {"legacy_c": True}, {"f_guard": False}])
    def test_variants_run(self, kw):
        ds = planted(n=30, d=8, c=3, seed=4)
        state, _ = fit(ds, make_split(ds, 0.3, 1), SgmfsConfig(max_iters=5, **kw))
        assert np.all(np.isfinite(state.objective_trace))

    def test_wide_data_uses_woodbury(self):
        ds = planted(n=20, d=60, c=3, seed=5)
        state, ranking = fit(ds, make_split(ds, 0.3, 0), SgmfsConfig(max_iters=10))
        trace = np.array(state.objective_trace)
        assert np.all(trace[1:] <= trace[:-1] * (1 + 1e-7))

    def test_split_size_mismatch(self):
        ds = planted(n=20, d=5, c=2)
        with pytest.raises(ValueError):
            fit(ds, SemiSplit((0,), (1, 2), 0), SgmfsConfig())


class TestSelect:
    def test_ceiling_count(self):
        r = FeatureRanking.from_weights(np.arange(10.0)[:, None])
        assert len(select_features(r, 0.3)) == 3
        assert select_features(r, 1.0) == r.order.tolist()

    def test_tie_rule(self):
        r = FeatureRanking.from_weights(np.array([[1.0], [5.0], [0.0], [5.0]]))
        assert select_features(r, 0.5) == [1, 3]

    @pytest.mark.parametrize("p", [0.0, 1.5])
    def test_bad_proportion(self, p):
        with pytest.raises(ValueError):
            select_features(FeatureRanking.from_weights(np.ones((3, 1))), p)
