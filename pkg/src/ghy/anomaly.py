"""Phase two: map embeddings to Euclidean space and flag malicious nodes.

Predictions file: UTF-8 CSV with header ``node_id,split,y_true,y_pred,score``
and one row per labeled node in node order; ``score`` is the malicious
score written with the shortest round-trip float repr.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from . import manifold as M
from .embedding import EmbeddingMatrix, atomic_write_text, fmt_float
from .graphio import SplitMask
from .metrics import Timer

log = logging.getLogger(__name__)

DETECTORS = ("knn", "gmm")
COLLAPSE_VAR = 1e-9
MAX_RESPREADS = 3


class CollapseWarning(RuntimeWarning):
    pass


@dataclass
class DetectorConfig:
    kind: str = "knn"
    k: int = 5
    components: int = 2
    covariance: str = "diagonal"
    max_iter: int = 200
    tol: float = 1e-6
    seed: int = 0
    distance: str = "euclidean-after-log"  # or "hyperbolic" (knn only)
    space: str = "tangent"  # or "raw": ambient coordinates as they are

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in DETECTORS:
            raise ValueError(f"unknown detector {self.kind!r}; expected knn or gmm")
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"k must be a positive odd number, got {self.k}")
        if self.components < 1:
            raise ValueError("components must be at least 1")
        if self.covariance != "diagonal":
            raise ValueError("only diagonal covariance is supported")
        if self.distance not in ("euclidean-after-log", "hyperbolic"):
            raise ValueError(f"unknown distance {self.distance!r}")
        if self.space not in ("tangent", "raw"):
            raise ValueError(f"unknown space {self.space!r}")
        if self.max_iter < 1 or self.tol <= 0:
            raise ValueError("max_iter must be >= 1 and tol > 0")


def to_euclidean(emb: EmbeddingMatrix) -> np.ndarray:
    """Orthonormal coordinates of the origin log-map, one row per node.

    Row norms equal hyperbolic distances to the origin. Pairwise Euclidean
    distances between rows do not in general preserve the order of the
    hyperbolic ones.
    """
    pts, K = emb.points, emb.K
    if emb.model == M.KLEIN:
        pts = np.asarray(M.klein_to_poincare(pts, K))
    if emb.model == M.LORENTZ:
        return np.asarray(M.Lorentz.logmap0(pts, K))
    # the metric at the Poincaré origin is 4 I, so 2 log_0 is orthonormal
    return 2.0 * np.asarray(M.PoincareBall.logmap0(pts, K))


# --- kNN ---------------------------------------------------------------------

@dataclass
class Prediction:
    labels: np.ndarray
    scores: np.ndarray


def knn_classify(train_X, train_y, query_X, cfg: DetectorConfig, train_ids=None,
                 distances=None) -> Prediction:
    """Majority vote of the k nearest training rows.

    Equal distances are broken by the smaller id in ``train_ids`` (row
    position by default), so the result does not depend on row order.
    A precomputed (query, train) ``distances`` matrix replaces the
    Euclidean one.
    """
    train_X = np.atleast_2d(np.asarray(train_X, dtype=np.float64))
    query_X = np.atleast_2d(np.asarray(query_X, dtype=np.float64))
    train_y = np.asarray(train_y)
    n = len(train_y)
    if n == 0:
        raise ValueError("empty training set")
    if cfg.k > n:
        raise ValueError(f"k={cfg.k} exceeds the {n} training points")
    ids = np.arange(n) if train_ids is None else np.asarray(train_ids)
    d = cdist(query_X, train_X) if distances is None else np.asarray(distances)
    if d.shape != (len(query_X), n):
        raise ValueError(f"distance matrix has shape {d.shape}, expected {(len(query_X), n)}")
    order = np.empty((len(query_X), cfg.k), dtype=np.int64)
    for q in range(len(query_X)):
        order[q] = np.lexsort((ids, d[q]))[:cfg.k]
    votes = train_y[order]
    scores = votes.mean(axis=1)
    return Prediction((scores > 0.5).astype(np.int64), scores)


# --- Gaussian mixture ---------------------------------------------------------

@dataclass
class GMMParams:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    columns: np.ndarray  # feature columns kept (zero-variance ones dropped)
    log_likelihoods: list = field(default_factory=list)
    train_resp: np.ndarray | None = None
    respreads: int = 0

    @property
    def n_iter(self):
        return len(self.log_likelihoods)


def _log_gauss(X, means, variances):
    """(n, c) log-densities of diagonal Gaussians."""
    diff = X[:, None, :] - means[None, :, :]
    return -0.5 * (np.sum(diff * diff / variances[None], axis=-1)
                   + np.sum(np.log(2 * np.pi * variances), axis=-1)[None])


def _kmeanspp(X, c, rng):
    centers = [X[rng.integers(len(X))]]
    for _ in range(1, c):
        d2 = np.min(cdist(X, np.array(centers), "sqeuclidean"), axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(len(X))])
        else:
            centers.append(X[rng.choice(len(X), p=d2 / total)])
    return np.array(centers)


def _estep(X, w, mu, var):
    joint = _log_gauss(X, mu, var) + np.log(w)[None]
    norm = logsumexp(joint, axis=1, keepdims=True)
    return np.exp(joint - norm), float(norm.sum())


def gmm_fit(train_X, cfg: DetectorConfig) -> GMMParams:
    X = np.atleast_2d(np.asarray(train_X, dtype=np.float64))
    c = cfg.components
    if len(X) < c:
        raise ValueError(f"{len(X)} training points for {c} components")
    if not np.all(np.isfinite(X)):
        raise ValueError("training data has non-finite entries")
    keep = np.flatnonzero(X.var(axis=0) > 0)
    if len(keep) == 0:
        keep = np.arange(X.shape[1])[:1]
    X = X[:, keep]
    rng = np.random.default_rng(cfg.seed)
    global_var = np.maximum(X.var(axis=0), COLLAPSE_VAR)
    mu = _kmeanspp(X, c, rng)
    var = np.tile(global_var, (c, 1))
    w = np.full(c, 1.0 / c)
    resp, ll = _estep(X, w, mu, var)
    lls = [ll]
    respreads = 0
    for _ in range(cfg.max_iter):
        nk = resp.sum(axis=0) + 10 * np.finfo(float).tiny
        w = nk / len(X)
        mu = resp.T @ X / nk[:, None]
        var = resp.T @ (X * X) / nk[:, None] - mu * mu
        var = np.maximum(var, 0.0)
        collapsed = np.flatnonzero(np.any(var < COLLAPSE_VAR, axis=1) | (nk < 1e-8))
        if len(collapsed):
            respreads += 1
            if respreads > MAX_RESPREADS:
                raise RuntimeError(f"mixture components {collapsed.tolist()} keep collapsing")
            warnings.warn(f"re-spreading collapsed components {collapsed.tolist()}", CollapseWarning)
            far = np.argsort(-np.min(cdist(X, mu, "sqeuclidean"), axis=1), kind="stable")
            for j, comp in enumerate(collapsed):
                mu[comp] = X[far[j]]
                var[comp] = global_var
                w[comp] = 1.0 / c
            w = w / w.sum()
            resp, ll = _estep(X, w, mu, var)
            lls = [ll]  # monotonicity restarts after a re-spread
            continue
        resp, ll = _estep(X, w, mu, var)
        if ll < lls[-1] - 1e-9 * max(1.0, abs(lls[-1])):
            raise RuntimeError(f"EM log-likelihood decreased: {lls[-1]!r} -> {ll!r}")
        gain = ll - lls[-1]
        lls.append(ll)
        if gain < cfg.tol:
            break
    return GMMParams(w, mu, var, keep, lls, resp, respreads)


def gmm_responsibilities(params: GMMParams, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))[:, params.columns]
    return _estep(X, params.weights, params.means, params.variances)[0]


def component_labels(params: GMMParams, train_y) -> np.ndarray:
    """Majority training label of the points each component claims."""
    train_y = np.asarray(train_y)
    overall = int(train_y.mean() > 0.5)
    claim = np.argmax(params.train_resp, axis=1)
    labels = np.full(len(params.weights), overall, dtype=np.int64)
    for comp in range(len(labels)):
        ys = train_y[claim == comp]
        if len(ys) and ys.mean() != 0.5:
            labels[comp] = int(ys.mean() > 0.5)
    return labels


def gmm_classify(params: GMMParams, train_y, query_X) -> Prediction:
    comp_label = component_labels(params, train_y)
    resp = gmm_responsibilities(params, query_X)
    scores = np.clip(resp[:, comp_label == 1].sum(axis=1), 0.0, 1.0)
    pred = comp_label[np.argmax(resp, axis=1)]
    return Prediction(pred, scores)


# --- pipeline -----------------------------------------------------------------

@dataclass
class DetectionResult:
    detector: str
    per_split: dict  # name -> (y_true, y_pred, scores)
    pred: np.ndarray
    scores: np.ndarray
    fit_seconds: float


def _features(emb: EmbeddingMatrix, cfg):
    return to_euclidean(emb) if cfg.space == "tangent" else np.array(emb.points)


def detect(emb: EmbeddingMatrix, labels, splits: SplitMask, cfg: DetectorConfig) -> DetectionResult:
    """Fit on the train split, then score every node."""
    labels = np.asarray(labels)
    if len(labels) != len(emb):
        raise ValueError(f"{len(labels)} labels for {len(emb)} embedded nodes")
    train = np.flatnonzero(splits.train)
    if len(train) == 0:
        raise ValueError("empty training split")
    X = _features(emb, cfg)
    timer = Timer()
    with timer:
        if cfg.kind == "knn":
            dist = None
            if cfg.distance == "hyperbolic":
                pts = emb.points
                dist = np.asarray(M.get(emb.model).dist(pts[:, None, :], pts[None, train, :],
                                                        emb.K))[..., 0]
            pred = knn_classify(X[train], labels[train], X, cfg, train_ids=train, distances=dist)
        else:
            params = gmm_fit(X[train], cfg)
            pred = gmm_classify(params, labels[train], X)
    per_split = {name: (labels[mask], pred.labels[mask], pred.scores[mask]) for name, mask in splits}
    log.info("%s fitted in %.3fs", cfg.kind, timer.seconds)
    return DetectionResult(cfg.kind, per_split, pred.labels, pred.scores, timer.seconds)


def predictions_csv(result: DetectionResult, labels, splits: SplitMask, node_ids=None) -> str:
    names = splits.name_of()
    ids = range(len(labels)) if node_ids is None else node_ids
    lines = ["node_id,split,y_true,y_pred,score"]
    for i, nid in enumerate(ids):
        lines.append(f"{nid},{names[i]},{int(labels[i])},{int(result.pred[i])},"
                     f"{fmt_float(result.scores[i])}")
    return "\n".join(lines) + "\n"


def write_predictions(path, result, labels, splits, node_ids=None):
    atomic_write_text(path, predictions_csv(result, labels, splits, node_ids))
