import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghy import manifold as M
from ghy.anomaly import (CollapseWarning, DetectorConfig, component_labels, detect, gmm_classify, gmm_fit,
                         gmm_responsibilities, knn_classify, predictions_csv, to_euclidean)
from ghy.embedding import EmbeddingMatrix
from ghy.graphio import make_splits


def ball(rng, n, d, max_dist=3.0):
    u = rng.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return np.tanh(rng.uniform(0, max_dist, (n, 1)) / 2) * u


class TestToEuclidean:
    @pytest.mark.parametrize("model", [M.POINCARE, M.LORENTZ, M.KLEIN])
    def test_norm_is_distance(self, model):
        rng = np.random.default_rng(0)
        p = ball(rng, 100, 4)
        pts = p if model == M.POINCARE else M.convert_raw(p, M.POINCARE, model, 1.0)
        rows = to_euclidean(EmbeddingMatrix(np.asarray(pts), model, 1.0))
        d = M.PoincareBall.dist(np.zeros_like(p), p, 1.0)[:, 0]
        np.testing.assert_allclose(np.linalg.norm(rows, axis=1), d, atol=1e-9)

    def test_origin_is_zero(self):
        np.testing.assert_array_equal(to_euclidean(EmbeddingMatrix(np.zeros((2, 3)), M.POINCARE, 1.0)), 0.0)


class TestKNN:
    def brute(self, X, y, Q, k):
        out = []
        for q in Q:
            d = [(float(np.sum((q - x) ** 2)), i) for i, x in enumerate(X)]
            nn = [i for _, i in sorted(d)[:k]]
            out.append(int(sum(y[i] for i in nn) * 2 > k))
        return out

    def test_hand_instance(self):
        X = np.array([[0, 0], [1, 0], [0, 1], [5, 5], [6, 5], [5, 6]], float)
        y = np.array([0, 0, 1, 1, 1, 0])
        Q = np.array([[0.2, 0.2], [5.5, 5.5], [3, 3], [0.9, 0.9]])
        pred = knn_classify(X, y, Q, DetectorConfig(k=3))
        # (3, 3): id 3 at 8, then ids 1, 2 win the four-way tie at 13
        assert pred.labels.tolist() == self.brute(X, y, Q, 3) == [0, 1, 1, 0]

    def test_exact_match_k1(self):
        X = np.array([[0.0], [1.0], [2.0]])
        pred = knn_classify(X, [0, 1, 0], np.array([[1.0]]), DetectorConfig(k=1))
        assert pred.labels.tolist() == [1] and pred.scores.tolist() == [1.0]

    def test_k_all_is_majority(self):
        X = np.random.default_rng(1).standard_normal((5, 2))
        pred = knn_classify(X, [1, 1, 0, 1, 0], X, DetectorConfig(k=5))
        assert pred.labels.tolist() == [1] * 5

    def test_tie_break_by_id(self):
        X = np.array([[-1.0], [1.0]])
        # query equidistant from both training rows: the smaller id wins
        a = knn_classify(X, [0, 1], np.array([[0.0]]), DetectorConfig(k=1), train_ids=[7, 3])
        b = knn_classify(X, [0, 1], np.array([[0.0]]), DetectorConfig(k=1), train_ids=[3, 7])
        assert a.labels.tolist() == [1] and b.labels.tolist() == [0]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.integers(0, 3, (12, 2)).astype(float)  # many exact ties
        y = rng.integers(0, 2, 12)
        Q = rng.integers(0, 3, (6, 2)).astype(float)
        perm = rng.permutation(12)
        ids = np.arange(12)
        a = knn_classify(X, y, Q, DetectorConfig(k=3), train_ids=ids)
        b = knn_classify(X[perm], y[perm], Q, DetectorConfig(k=3), train_ids=ids[perm])
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.scores, b.scores)

    def test_errors(self):
        with pytest.raises(ValueError, match="empty"):
            knn_classify(np.zeros((0, 2)), [], np.zeros((1, 2)), DetectorConfig(k=1))
        with pytest.raises(ValueError, match="exceeds"):
            knn_classify(np.zeros((2, 2)), [0, 1], np.zeros((1, 2)), DetectorConfig(k=3))
        with pytest.raises(ValueError, match="odd"):
            DetectorConfig(k=4)
        with pytest.raises(ValueError, match="unknown detector"):
            DetectorConfig(kind="forest")


class TestGMM:
    def blobs(self, seed=0, n=200):
        rng = np.random.default_rng(seed)
        X = np.vstack([rng.normal(-5, 0.1, (n, 2)), rng.normal(5, 0.1, (n, 2))])
        return X, np.repeat([0, 1], n)

    def test_one_component_closed_form(self):
        X = np.random.default_rng(2).standard_normal((50, 3))
        p = gmm_fit(X, DetectorConfig(kind="gmm", components=1))
        np.testing.assert_allclose(p.means[0], X.mean(axis=0), atol=1e-9)
        np.testing.assert_allclose(p.variances[0], X.var(axis=0), atol=1e-9)

    @pytest.mark.parametrize("seed", range(3))
    def test_recovers_blobs(self, seed):
        X, _ = self.blobs(seed)
        p = gmm_fit(X, DetectorConfig(kind="gmm", seed=seed))
        means = p.means[np.argsort(p.means[:, 0])]
        np.testing.assert_allclose(means, [[-5, -5], [5, 5]], atol=0.05)

    @pytest.mark.parametrize("seed", range(5))
    def test_log_likelihood_monotone(self, seed):
        rng = np.random.default_rng(seed)
        X = np.vstack([rng.normal(0, 1, (80, 3)), rng.normal(1.5, 0.5, (40, 3))])
        p = gmm_fit(X, DetectorConfig(kind="gmm", components=3, seed=seed, tol=1e-10))
        ll = np.array(p.log_likelihoods)
        assert np.all(np.diff(ll) >= -1e-9 * np.abs(ll[:-1]).clip(1))

    def test_classify_at_mean(self):
        X, y = self.blobs()
        p = gmm_fit(X, DetectorConfig(kind="gmm"))
        pred = gmm_classify(p, y, p.means)
        resp = gmm_responsibilities(p, p.means)
        lab = component_labels(p, y)
        assert pred.labels.tolist() == lab.tolist()
        assert np.all(np.max(resp, axis=1) > 0.99)
        np.testing.assert_allclose(resp.sum(axis=1), 1.0, atol=1e-12)
        assert np.all((pred.scores >= 0) & (pred.scores <= 1))

    def test_single_component_majority(self):
        X, y = self.blobs()
        y = np.r_[np.ones(250, int), np.zeros(150, int)]
        p = gmm_fit(X, DetectorConfig(kind="gmm", components=1))
        assert set(gmm_classify(p, y, X).labels.tolist()) == {1}

    def test_constant_column_dropped(self):
        X, _ = self.blobs()
        X = np.hstack([X, np.full((len(X), 1), 3.0)])
        p = gmm_fit(X, DetectorConfig(kind="gmm"))
        assert p.columns.tolist() == [0, 1]

    def test_collapse_warns_then_fails(self):
        # 3 distinct values for 3 components: every respread collapses again
        X = np.repeat([[0.0], [1.0], [2.0]], [20, 1, 1], axis=0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CollapseWarning)
            with pytest.raises(RuntimeError, match="collapsing"):
                gmm_fit(X, DetectorConfig(kind="gmm", components=3))

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            gmm_fit(np.zeros((1, 2)), DetectorConfig(kind="gmm"))


class TestDetect:
    def separated(self, n=200, seed=0):
        rng = np.random.default_rng(seed)
        labels = np.repeat([0, 1], n // 2)
        t = rng.normal(0, 0.05, (n, 3))
        t[:, 0] += np.where(labels == 1, 1.0, -1.0)
        return EmbeddingMatrix(np.tanh(np.linalg.norm(t, axis=1, keepdims=True)) * t
                               / np.linalg.norm(t, axis=1, keepdims=True), M.POINCARE, 1.0), labels

    @pytest.mark.parametrize("kind,distance", [("knn", "euclidean-after-log"), ("knn", "hyperbolic"),
                                               ("gmm", "euclidean-after-log")])
    def test_separated_f1(self, kind, distance):
        from ghy.metrics import confusion, prf1
        emb, labels = self.separated()
        before = emb.points.copy()
        res = detect(emb, labels, make_splits(labels, 0), DetectorConfig(kind=kind, distance=distance))
        y_true, y_pred, _ = res.per_split["test"]
        assert prf1(confusion(y_true, y_pred))[3] == 1.0
        np.testing.assert_array_equal(emb.points, before)

    def test_permuted_labels_chance(self):
        from ghy.metrics import auc
        aucs = []
        for seed in range(5):
            emb, labels = self.separated(seed=seed)
            labels = np.random.default_rng(100 + seed).permutation(labels)
            res = detect(emb, labels, make_splits(labels, seed), DetectorConfig(k=5))
            y_true, _, scores = res.per_split["test"]
            aucs.append(auc(scores, y_true))
        assert 0.35 <= np.median(aucs) <= 0.65

    def test_predictions_csv(self):
        emb, labels = self.separated(n=20)
        splits = make_splits(labels, 0)
        res = detect(emb, labels, splits, DetectorConfig(k=3))
        lines = predictions_csv(res, labels, splits, node_ids=range(100, 120)).splitlines()
        assert lines[0] == "node_id,split,y_true,y_pred,score"
        assert len(lines) == 21
        first = lines[1].split(",")
        assert first[0] == "100" and first[1] in ("train", "val", "test")

    def test_label_count_mismatch(self):
        emb, labels = self.separated(n=20)
        with pytest.raises(ValueError):
            detect(emb, labels[:-1], make_splits(labels[:-1], 0), DetectorConfig())
