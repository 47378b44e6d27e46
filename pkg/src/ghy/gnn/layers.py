"""Layer primitives shared by the four graph models.

Every function works on plain numpy arrays or on :class:`ghy.diff.Tensor`
values, so the same code runs in tests, in inference and under the tape.
Point matrices are ``(n, d)`` on the Poincaré ball or ``(n, d + 1)`` on the
hyperboloid; weights are stored ``(d_out, d_in)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import diff as F
from .. import manifold as M
from ..embedding import EmbeddingMatrix
from ..graphio import NormAdj
from ..shallow import FermiDiracParams, fermi_dirac_prob

ORTHO_TOL = 1e-6


@dataclass
class LayerParams:
    W: np.ndarray
    b: np.ndarray | None = None
    K: float = 1.0
    attention: np.ndarray | None = None
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in F.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; "
                             f"expected one of {sorted(F.ACTIVATIONS)}")
        for name in ("W", "b", "attention"):
            v = getattr(self, name)
            if v is not None and not np.all(np.isfinite(F.value_of(v))):
                raise ValueError(f"layer parameter {name} has non-finite entries")


@dataclass
class Diagnostics:
    """Invariant monitoring for instrumented runs."""

    lorentz_max_err: float = 0.0
    lorentz_checks: int = 0
    lorentz_violations: int = 0
    manifold_checks: int = 0
    tol: float = 1e-12
    notes: list = field(default_factory=list)

    def isometry(self, before, after):
        inner_in = np.asarray(M.Lorentz.minkowski(before, before))
        inner_out = np.asarray(M.Lorentz.minkowski(after, after))
        err = float(np.max(np.abs(inner_out - inner_in)))
        self.lorentz_checks += 1
        self.lorentz_max_err = max(self.lorentz_max_err, err)
        if err > self.tol:
            self.lorentz_violations += 1

    def point(self, x, model, K):
        M.check_point(F.value_of(x), model, float(np.asarray(F.value_of(K)).reshape(-1)[0]))
        self.manifold_checks += 1


def _kernel(model):
    if model not in (M.POINCARE, M.LORENTZ):
        raise ValueError(f"layers run on poincare or lorentz, not {model!r}")
    return M.get(model)


def _act(name):
    return F.ACTIVATIONS[name]


def _linear(t, W, b=None):
    w_in = W.shape[1]
    if t.shape[-1] != w_in:
        raise ValueError(f"dimension mismatch: input has {t.shape[-1]} features, W expects {w_in}")
    out = t @ F.transpose(W)
    return out if b is None else out + b


# --- lifting and curvature --------------------------------------------------

def feature_lift(features, K=1.0, model=M.POINCARE):
    """Treat each feature row as a tangent vector at the origin and exp-map it.

    For the hyperboloid the row is the space part of a tangent vector whose
    time coordinate is 0.
    """
    x = F.value_of(features)
    if not np.all(np.isfinite(x)):
        bad = np.flatnonzero(~np.all(np.isfinite(x), axis=-1))
        raise ValueError(f"non-finite feature rows: {bad[:5].tolist()}")
    return _kernel(model).from_tangent0(features, K)


def curvature_change(x, K_from, K_to, model=M.POINCARE):
    """log at the origin under K_from, rescale by sqrt(K_from/K_to), exp under K_to.

    Distances to the origin scale by sqrt(K_from / K_to).
    """
    k = _kernel(model)
    scale = F.sqrt(K_from / K_to) if (F.is_tensor(K_from) or F.is_tensor(K_to)) \
        else np.sqrt(K_from / K_to)
    return k.from_tangent0(k.to_tangent0(x, K_from) * scale, K_to)


def tangent_activation(x, activation, K_in, K_out=None, model=M.POINCARE):
    """sigma applied in the tangent space at the origin, then moved to K_out."""
    k = _kernel(model)
    K_out = K_in if K_out is None else K_out
    out = k.from_tangent0(_act(activation)(k.to_tangent0(x, K_in)), K_in)
    if K_out is K_in:
        return out
    return curvature_change(out, K_in, K_out, model)


# --- HGNN -------------------------------------------------------------------

def hgnn_layer(H, adj: NormAdj, P: LayerParams, model=M.POINCARE, base=None):
    """sigma(exp_x'(sum_v A_uv W log_x'(h_v))) with x' the origin by default."""
    k = _kernel(model)
    K = P.K
    if base is not None and model != M.POINCARE:
        raise ValueError("a non-origin reference point is supported on the Poincaré ball only")
    if base is None:
        t = k.to_tangent0(H, K)
    else:
        t = k.logmap(base, H, K)
    agg = F.spmm(adj.matrix, _linear(t, P.W))
    if base is None:
        out = k.from_tangent0(agg, K)
    else:
        out = k.proj(k.expmap(base, agg, K), K)
    if P.activation == "identity":
        return out
    if model == M.POINCARE:
        return k.from_tangent0(_act(P.activation)(k.to_tangent0(out, K)), K)
    # hyperboloid: activation on Poincaré coordinates, then back
    p = M.PoincareBall.proj(_act(P.activation)(M.lorentz_to_poincare(out, K)), K)
    return M.Lorentz.proj(M.poincare_to_lorentz(p, K), K)


# --- HGCN -------------------------------------------------------------------

def hgcn_linear(x, P: LayerParams, model=M.POINCARE):
    """(W (x)_K x) (+)_K b: Möbius matrix-vector product then bias."""
    k = _kernel(model)
    if P.K is not None and not F.is_tensor(P.K) and P.K <= 0:
        raise M.ManifoldError("curvature must be positive")
    out = k.from_tangent0(_linear(k.to_tangent0(x, P.K), P.W), P.K)
    if P.b is None:
        return out
    return k.add_bias(out, P.b, P.K)


def attention_weights(t_recv_src, rows, cols, n, attention):
    """alpha over incoming messages: softmax_j LeakyReLU(a . [t_i ; t_j]).

    ``t_recv_src`` holds one representation per node; ``rows``/``cols`` are
    receiver/sender indices of every message (self-loops included).
    """
    d = t_recv_src.shape[-1]
    if attention.shape[0] != 2 * d:
        raise ValueError(f"attention vector has {attention.shape[0]} entries, need {2 * d}")
    if n and np.any(np.bincount(rows, minlength=n) == 0):
        empty = np.flatnonzero(np.bincount(rows, minlength=n) == 0)
        raise ValueError(f"nodes with an empty neighbourhood: {empty[:5].tolist()}")
    a = F.getitem(attention, slice(0, d))
    c = F.getitem(attention, slice(d, 2 * d))
    score = F.gather(t_recv_src @ a, rows) + F.gather(t_recv_src @ c, cols)
    return F.segment_softmax(F.leaky_relu(score), rows, n)


def hgcn_attention_aggregate(H, adj: NormAdj, P: LayerParams, model=M.POINCARE,
                             return_weights=False):
    """x_i = exp_0(sum_j w_ij log_0(x_j)) with attention weights w over N(i) and i."""
    k = _kernel(model)
    t = k.to_tangent0(H, P.K)
    rows, cols = adj.rows, adj.cols
    w = attention_weights(t, rows, cols, adj.n, _col(P.attention))
    agg = F.weighted_segment_sum(w, t, rows, cols, adj.n)
    out = k.from_tangent0(agg, P.K)
    return (out, w) if return_weights else out


def _col(a):
    """Attention vectors are stored flat; matmul wants a column."""
    if F.is_tensor(a):
        return a if a.ndim == 2 else F.getitem(a, (slice(None), None))
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(-1, 1)


# --- H2H-GCN ----------------------------------------------------------------

def orthogonality_error(W) -> float:
    W = np.asarray(F.value_of(W))
    return float(np.max(np.abs(W.T @ W - np.eye(W.shape[1]))))


def reorthogonalize(W, iters=60, tol=1e-15):
    """Orthogonal polar factor of W by Newton-Schulz iteration.

    Falls back to the SVD when the iteration cannot converge (spectral norm
    of W at or above sqrt(3)).
    """
    W = np.array(W, dtype=np.float64)
    eye = np.eye(W.shape[1])
    if np.linalg.norm(W, 2) >= np.sqrt(3.0) * 0.999:
        u, _, vt = np.linalg.svd(W)
        return u @ vt
    for _ in range(iters):
        W = 1.5 * W - 0.5 * W @ (W.T @ W)
        if np.max(np.abs(W.T @ W - eye)) <= tol:
            break
    return W


def h2h_lorentz_linear(x, W, check=True):
    """Apply the block matrix [[1, 0], [0, W]] with W orthogonal.

    The time coordinate is untouched and the space part is rotated, so the
    Minkowski norm is preserved.
    """
    d = x.shape[-1] - 1
    if W.shape != (d, d):
        raise ValueError(f"space block must be {d}x{d}, got {W.shape}")
    if check and orthogonality_error(W) > ORTHO_TOL:
        raise ValueError(f"W is not orthogonal (max |W^T W - I| = {orthogonality_error(W):.3g})")
    time = F.getitem(x, (slice(None), slice(0, 1)))
    rest = F.getitem(x, (slice(None), slice(1, None)))
    return F.concat([time, rest @ F.transpose(W)], axis=-1)


def clip_tangent(v, radius):
    """Shrink origin-tangent vectors to Euclidean norm at most ``radius``."""
    if radius is None:
        return v
    return v * (radius / F.maximum(F.norm(v), radius))


def clip_poincare(p, radius, K=1.0):
    """Shrink Poincaré points to hyperbolic distance at most ``radius`` from
    the origin (plain boundary projection when ``radius`` is None)."""
    if radius is None:
        return M.PoincareBall.proj(p, K)
    sk = np.sqrt(float(K))
    max_norm = min(sk * np.tanh(radius / (2.0 * sk)), (1.0 - M.EPS_BALL) * sk)
    return p * (max_norm / F.maximum(F.norm(p), max_norm))


def h2h_aggregate(H, adj: NormAdj, K=1.0, activation="selu", max_radius=None):
    """Einstein midpoint in the Klein model with weights A, activation in the
    Poincaré model, then back to the hyperboloid.

    ``max_radius`` bounds the distance from the origin after the activation.
    """
    klein = M.lorentz_to_klein(H, K)
    gamma = M.Klein.lorentz_factor(klein, K)
    num = F.spmm(adj.matrix, gamma * klein)
    den = F.spmm(adj.matrix, gamma)
    mid = M.Klein.proj(num / den, K)
    p = M.klein_to_poincare(mid, K)
    if activation != "identity":
        p = clip_poincare(_act(activation)(p), max_radius, K)
    return M.Lorentz.proj(M.poincare_to_lorentz(p, K), K)


# --- HGCAE ------------------------------------------------------------------

def hgcae_layer(H, adj: NormAdj, P: LayerParams, model=M.POINCARE, return_weights=False):
    """z_i = exp_0(sum_{j in N(i) and i} alpha_ij (W log_0(h_j) + b)), then sigma
    applied in the tangent space."""
    k = _kernel(model)
    msg = _linear(k.to_tangent0(H, P.K), P.W, P.b)
    rows, cols = adj.rows, adj.cols
    w = attention_weights(msg, rows, cols, adj.n, _col(P.attention))
    agg = F.weighted_segment_sum(w, msg, rows, cols, adj.n)
    out = k.from_tangent0(_act(P.activation)(agg), P.K)
    return (out, w) if return_weights else out


# --- decoders and heads ------------------------------------------------------

def fermi_dirac_decoder(emb, pairs, fd: FermiDiracParams = FermiDiracParams(), K=None,
                        model=None):
    """Edge probabilities for the ``(m, 2)`` index array ``pairs``.

    ``emb`` is an :class:`EmbeddingMatrix` or a raw point array (then ``K``
    and ``model`` are required).
    """
    if isinstance(emb, EmbeddingMatrix):
        pts, K, model = emb.points, emb.K, emb.model
    else:
        pts = emb
        if K is None or model is None:
            raise ValueError("K and model are required for raw point arrays")
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    k = M.get(model)
    d = k.dist(F.gather(pts, pairs[:, 0]), F.gather(pts, pairs[:, 1]), K)
    return fermi_dirac_prob(d, fd)


def logreg_logits(t, w, b):
    """Binary logistic-regression logits of tangent vectors ``t``."""
    return _linear(t, F.transpose(_col(w)), b)


def bce_logits(logits, y):
    """Mean binary cross-entropy of logits against 0/1 targets."""
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    return -F.mean(y * F.log_sigmoid(logits) + (1.0 - y) * F.log_sigmoid(-logits))


@dataclass
class HeadResult:
    w: np.ndarray
    b: np.ndarray
    scores: np.ndarray  # logits for every node
    train_accuracy: float
    losses: list


def tangent_logreg_head(emb: EmbeddingMatrix, labels, train_mask, epochs=500, lr=0.5,
                        l2=0.0) -> HeadResult:
    """Fit a binary logistic regression on origin-log embeddings of the
    training nodes by full-batch gradient descent; score every node."""
    labels = np.asarray(labels)
    train = np.flatnonzero(np.asarray(train_mask, dtype=bool))
    y = labels[train]
    if len(np.unique(y)) < 2:
        raise ValueError("training split has a single class; logistic head needs both")
    t_all = np.asarray(M.get(emb.model).to_tangent0(emb.points, emb.K))
    t = t_all[train]
    w = np.zeros(t.shape[1])
    b = np.zeros(1)
    losses = []
    for _ in range(epochs):
        tape = F.Tape()
        wv, bv = tape.variable(w, "w"), tape.variable(b, "b")
        loss = bce_logits(logreg_logits(t, wv, bv), y)
        if l2:
            loss = loss + l2 * F.sum(wv * wv)
        F.backward(tape, loss)
        losses.append(float(loss.data))
        w = w - lr * wv.grad
        b = b - lr * bv.grad
    scores = np.asarray(logreg_logits(t_all, w, b))[:, 0]
    acc = float(np.mean((scores[train] > 0) == (y == 1)))
    return HeadResult(w, b, scores, acc, losses)
