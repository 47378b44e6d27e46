"""Invariant and gradient suites behind ``ghy check``.

Each suite returns a list of :class:`CheckResult`. Random inputs are drawn
from seeded generators and kept away from the ball boundary, kinks of
piecewise activations and the arcosh branch point.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import diff as F
from . import manifold as M
from .gnn import layers as L
from .gnn.models import hgcae_loss
from .graphio import Graph
from .shallow import FermiDiracParams, fermi_dirac_prob, shallow_loss


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0


# --- random interior inputs ---------------------------------------------------

def unit_rows(rng, n, d):
    u = rng.standard_normal((n, d))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def poincare_points(rng, n, d, K=1.0, max_dist=4.0):
    """Points at hyperbolic distance uniform in [0, max_dist] from the origin."""
    r = rng.uniform(0.0, max_dist, (n, 1))
    sk = np.sqrt(K)
    return sk * np.tanh(r / (2 * sk)) * unit_rows(rng, n, d)


def lorentz_points(rng, n, d, K=1.0, max_dist=4.0):
    return np.asarray(M.poincare_to_lorentz(poincare_points(rng, n, d, K, max_dist), K))


# --- geometry -----------------------------------------------------------------

def geometry_suite(n=10_000, seed=0, K=1.0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    def run(name, fn):
        t0 = time.perf_counter()
        ok, detail = fn()
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))

    d = 5
    x, y, z = (poincare_points(rng, n, d, K) for _ in range(3))

    def exp_log():
        base = poincare_points(rng, n, d, K, 3.0)
        v = unit_rows(rng, n, d) * rng.uniform(0, 3.0, (n, 1))
        v = v / np.asarray(M.PoincareBall.lambda_x(base, K))  # metric norm <= 3
        back = M.PoincareBall.logmap(base, M.PoincareBall.expmap(base, v, K), K)
        err_p = np.max(np.abs(back - v))
        lb = lorentz_points(rng, n, d, K, 3.0)
        raw = rng.standard_normal((n, d + 1))
        tv = np.asarray(M.Lorentz.proj_tan(lb, raw, K))
        tv = tv / np.asarray(M.Lorentz.tnorm(lb, tv, K)) * rng.uniform(0, 3.0, (n, 1))
        back_l = M.Lorentz.logmap(lb, M.Lorentz.expmap(lb, tv, K), K)
        err_l = np.max(np.abs(back_l - tv) / np.maximum(1.0, np.abs(tv)))
        return max(err_p, err_l) < 1e-8, f"poincare {err_p:.2e}, lorentz {err_l:.2e}"

    def isometry():
        dp = np.asarray(M.PoincareBall.dist(x, y, K))
        xl, yl = M.poincare_to_lorentz(x, K), M.poincare_to_lorentz(y, K)
        xk, yk = M.poincare_to_klein(x, K), M.poincare_to_klein(y, K)
        err_l = np.max(np.abs(dp - np.asarray(M.Lorentz.dist(xl, yl, K))))
        err_k = np.max(np.abs(dp - np.asarray(M.Klein.dist(xk, yk, K))))
        return max(err_l, err_k) <= 1e-9, f"lorentz {err_l:.2e}, klein {err_k:.2e}"

    def mobius():
        add = M.PoincareBall.mobius_add
        zero = np.zeros_like(x)
        errs = [np.max(np.abs(add(x, zero, K) - x)), np.max(np.abs(add(zero, x, K) - x)),
                np.max(np.abs(add(-x, x, K))),
                np.max(np.abs(add(-x, add(x, y, K), K) - y))]
        return max(errs) < 1e-9, "identity/inverse/left-cancellation " + ", ".join(f"{e:.1e}" for e in errs)

    def midpoint():
        worst = 0.0
        for i in range(200):
            p = np.asarray(M.poincare_to_klein(x[i:i + 1], K))[0]
            mid = np.asarray(M.Klein.midpoint(np.stack([p, -p]), np.ones(2), K))
            worst = max(worst, float(np.max(np.abs(mid))))
            pts = np.asarray(M.poincare_to_klein(x[i:i + 4], K))
            w = rng.uniform(0.1, 1.0, 4)
            perm = rng.permutation(4)
            a = np.asarray(M.Klein.midpoint(pts, w, K))
            b = np.asarray(M.Klein.midpoint(pts[perm], w[perm], K))
            worst = max(worst, float(np.max(np.abs(a - b))))
        return worst < 1e-12, f"max deviation {worst:.2e}"

    def triangle():
        dxy = np.asarray(M.PoincareBall.dist(x, y, K))
        dyz = np.asarray(M.PoincareBall.dist(y, z, K))
        dxz = np.asarray(M.PoincareBall.dist(x, z, K))
        slack = np.min(dxy + dyz - dxz)
        return slack >= -1e-9, f"min slack {slack:.2e}"

    run("exp/log inversion", exp_log)
    run("conversion isometry", isometry)
    run("Möbius identities", mobius)
    run("Einstein midpoint symmetry", midpoint)
    run("triangle inequality", triangle)
    return out


# --- gradients ----------------------------------------------------------------

def _proj(out, R):
    """Scalarize with fixed random weights so every output entry matters."""
    return F.sum(out * R)


def _tiny_graph():
    return Graph.from_edges([(0, 1), (1, 2), (2, 3), (0, 2)], 4,
                            features=np.array([[0.3, -0.2, 0.1], [0.0, 0.4, -0.3],
                                               [-0.2, 0.1, 0.2], [0.1, 0.1, -0.4]]))


def gradient_cases() -> dict[str, Callable]:
    """name -> builder(rng) returning (fn, point)."""
    cases: dict[str, Callable] = {}
    g = _tiny_graph()
    adj = g.norm_adj

    def case(name):
        def deco(builder):
            cases[name] = builder
            return builder
        return deco

    def away(rng, shape, lo=0.2, hi=1.5):
        return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)

    # primitives
    @case("add")
    def _(rng):
        R = rng.standard_normal((2, 3))
        return (lambda a, b: _proj(a + b, R)), {"a": rng.standard_normal((2, 3)), "b": rng.standard_normal(3)}

    @case("mul/div")
    def _(rng):
        R = rng.standard_normal((2, 3))
        return (lambda a, b: _proj(a * b / (b * b + 1.0), R)), \
            {"a": rng.standard_normal((2, 3)), "b": rng.standard_normal((2, 1))}

    @case("matmul")
    def _(rng):
        R = rng.standard_normal((3, 2))
        return (lambda a, b: _proj(a @ b, R)), {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((4, 2))}

    @case("power/sqrt/log/exp")
    def _(rng):
        R = rng.standard_normal(4)
        return (lambda a: _proj(F.sqrt(F.exp(a) + a ** 2) + F.log(a * a + 1.0), R)), \
            {"a": rng.standard_normal(4)}

    @case("tanh/cosh/sinh")
    def _(rng):
        R = rng.standard_normal(4)
        return (lambda a: _proj(F.tanh(a) + F.cosh(a) * 0.1 + F.sinh(a) * 0.1, R)), {"a": rng.standard_normal(4)}

    @case("artanh")
    def _(rng):
        R = rng.standard_normal(4)
        return (lambda a: _proj(F.artanh(a), R)), {"a": rng.uniform(-0.9, 0.9, 4)}

    @case("arcosh")
    def _(rng):
        R = rng.standard_normal(4)
        return (lambda a: _proj(F.arcosh(a), R)), {"a": rng.uniform(1.05, 5.0, 4)}

    @case("activations")
    def _(rng):
        R = rng.standard_normal((3, 4))
        return (lambda a: _proj(F.relu(a) + F.leaky_relu(a) + F.selu(a) + F.abs(a), R)), \
            {"a": away(rng, (3, 4))}

    @case("sigmoid/log_sigmoid")
    def _(rng):
        R = rng.standard_normal(5)
        return (lambda a: _proj(F.sigmoid(a) + F.log_sigmoid(a), R)), {"a": rng.standard_normal(5) * 3}

    @case("norm/sum/mean")
    def _(rng):
        R = rng.standard_normal((3, 1))
        return (lambda a: _proj(F.norm(a), R) + F.mean(a) * 0.5 + F.sum(a, axis=0)[1]), \
            {"a": rng.standard_normal((3, 4))}

    @case("getitem/concat/transpose")
    def _(rng):
        R = rng.standard_normal((5, 3))
        return (lambda a: _proj(F.concat([F.transpose(a)[:, :2], F.transpose(a)[:, 1:2]], axis=-1), R)), \
            {"a": rng.standard_normal((3, 5))}

    @case("gather/segment_sum")
    def _(rng):
        idx = np.array([0, 2, 2, 1, 0])
        seg = np.array([1, 0, 1, 1, 2])
        R = rng.standard_normal((3, 2))
        return (lambda a: _proj(F.segment_sum(F.gather(a, idx), seg, 3), R)), {"a": rng.standard_normal((3, 2))}

    @case("weighted_segment_sum")
    def _(rng):
        rows = np.array([0, 0, 1, 2, 2, 2])
        cols = np.array([0, 1, 1, 2, 0, 1])
        R = rng.standard_normal((3, 2))
        return (lambda w, a: _proj(F.weighted_segment_sum(w, a, rows, cols, 3), R)), \
            {"w": rng.standard_normal((6, 1)), "a": rng.standard_normal((3, 2))}

    @case("segment_softmax/softmax")
    def _(rng):
        seg = np.array([0, 0, 1, 1, 1])
        R1, R2 = rng.standard_normal((5, 1)), rng.standard_normal((2, 3))
        return (lambda s, t: _proj(F.segment_softmax(s, seg, 2), R1) + _proj(F.softmax(t), R2)), \
            {"s": rng.standard_normal((5, 1)), "t": rng.standard_normal((2, 3))}

    @case("spmm")
    def _(rng):
        R = rng.standard_normal((4, 2))
        return (lambda a: _proj(F.spmm(adj.matrix, a), R)), {"a": rng.standard_normal((4, 2))}

    @case("clamp/maximum")
    def _(rng):
        R = rng.standard_normal(6)
        a = np.concatenate([rng.uniform(-2, -0.5, 3), rng.uniform(0.5, 2, 3)])
        return (lambda a: _proj(F.clamp_min(a, 0.0) + F.clamp_max(a, 0.0) * 2 + F.maximum(a, 0.1 * a), R)), {"a": a}

    # geometry
    @case("mobius_add")
    def _(rng):
        R = rng.standard_normal((3, 4))
        return (lambda x, y: _proj(M.PoincareBall.mobius_add(x, y, 1.0), R)), \
            {"x": poincare_points(rng, 3, 4, max_dist=3.0), "y": poincare_points(rng, 3, 4, max_dist=3.0)}

    @case("mobius_scalar")
    def _(rng):
        R = rng.standard_normal((3, 4))
        return (lambda x: _proj(M.PoincareBall.mobius_scalar(0.7, x, 1.0), R)), \
            {"x": poincare_points(rng, 3, 4, max_dist=3.0) + 0.01}

    @case("poincare exp/log at origin")
    def _(rng):
        R = rng.standard_normal((3, 4))
        return (lambda v, K: _proj(M.PoincareBall.logmap0(M.PoincareBall.expmap0(v, K) * 0.9, K), R)), \
            {"v": rng.standard_normal((3, 4)), "K": rng.uniform(0.5, 2.0, 1)}

    @case("poincare exp/log")
    def _(rng):
        R1, R2 = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        x = poincare_points(rng, 3, 4, max_dist=2.0)
        y = poincare_points(rng, 3, 4, max_dist=2.0)
        return (lambda x, y, v: _proj(M.PoincareBall.logmap(x, y, 1.0), R1)
                + _proj(M.PoincareBall.expmap(x, v, 1.0), R2)), \
            {"x": x, "y": y, "v": rng.standard_normal((3, 4)) * 0.3}

    @case("poincare distance")
    def _(rng):
        R = rng.standard_normal((3, 1))
        return (lambda x, y, K: _proj(M.PoincareBall.dist(x, y, K), R)), \
            {"x": poincare_points(rng, 3, 4, max_dist=3.0), "y": poincare_points(rng, 3, 4, max_dist=3.0) + 0.05,
             "K": rng.uniform(1.0, 2.0, 1)}

    @case("lorentz distance")
    def _(rng):
        R = rng.standard_normal((3, 1))
        return (lambda u, w: _proj(M.Lorentz.dist(M.Lorentz.expmap0(u, 1.0), M.Lorentz.expmap0(w, 1.0), 1.0), R)), \
            {"u": rng.standard_normal((3, 4)), "w": rng.standard_normal((3, 4))}

    @case("lorentz exp/log/transport")
    def _(rng):
        R1, R2 = rng.standard_normal((3, 5)), rng.standard_normal((3, 5))
        def fn(u, w, v):
            x, y = M.Lorentz.expmap0(u, 1.0), M.Lorentz.expmap0(w, 1.0)
            t = M.Lorentz.proj_tan(x, v, 1.0)
            return _proj(M.Lorentz.logmap(x, y, 1.0), R1) + _proj(M.Lorentz.ptransp(x, y, t, 1.0), R2) \
                + F.sum(M.Lorentz.expmap(x, t * 0.3, 1.0)) * 0.1
        # moderate radii: far points give values near 1e7 and useless difference quotients
        return fn, {"u": rng.standard_normal((3, 4)) * 0.5, "w": rng.standard_normal((3, 4)) * 0.5,
                    "v": rng.standard_normal((3, 5)) * 0.5}

    @case("klein distance / conversions")
    def _(rng):
        R = rng.standard_normal((3, 1))
        def fn(x, y):
            xk = M.lorentz_to_klein(M.poincare_to_lorentz(x, 1.0), 1.0)
            yk = M.poincare_to_klein(y, 1.0)
            back = M.klein_to_poincare(M.lorentz_to_klein(M.klein_to_lorentz(yk, 1.0), 1.0), 1.0)
            return _proj(M.Klein.dist(xk, yk, 1.0), R) + F.sum(back * back)
        return fn, {"x": poincare_points(rng, 3, 4, max_dist=3.0), "y": poincare_points(rng, 3, 4, max_dist=3.0)}

    @case("einstein midpoint")
    def _(rng):
        R = rng.standard_normal(4)
        return (lambda p, w: _proj(M.Klein.midpoint(p, w, 1.0), R)), \
            {"p": np.asarray(M.poincare_to_klein(poincare_points(rng, 5, 4, max_dist=3.0), 1.0)),
             "w": rng.uniform(0.2, 1.0, 5)}

    @case("fermi-dirac")
    def _(rng):
        R = rng.standard_normal(4)
        return (lambda d: _proj(fermi_dirac_prob(d, FermiDiracParams(2.0, 0.7)), R)), {"d": rng.uniform(0, 6, 4)}

    @case("shallow loss")
    def _(rng):
        return (lambda e: shallow_loss(e, [(0, 1), (1, 2)], [(0, 3), (2, 3)])), \
            {"e": poincare_points(rng, 4, 3, max_dist=3.0)}

    # layers
    def pts(rng, n=4, d=3, K=1.0):
        return poincare_points(rng, n, d, K, max_dist=2.5)

    @case("attention score")
    def _(rng):
        R = rng.standard_normal((len(adj.rows), 1))
        return (lambda t, a: _proj(L.attention_weights(t, adj.rows, adj.cols, 4, a), R)), \
            {"t": rng.standard_normal((4, 3)), "a": rng.standard_normal((6, 1))}

    @case("feature_lift")
    def _(rng):
        R1, R2 = rng.standard_normal((4, 3)), rng.standard_normal((4, 4))
        return (lambda X, K: _proj(L.feature_lift(X, K), R1) + _proj(L.feature_lift(X, K, M.LORENTZ), R2)), \
            {"X": rng.standard_normal((4, 3)), "K": rng.uniform(0.5, 2.0, 1)}

    @case("hgnn_layer")
    def _(rng):
        R1, R2 = rng.standard_normal((4, 3)), rng.standard_normal((4, 4))
        # u stays small: larger tangents push the Lorentz branch's output onto
        # the ball clamp, where difference quotients lose all precision
        def fn(H, W, u):
            a = L.hgnn_layer(H, adj, L.LayerParams(W, activation="selu"))
            b = L.hgnn_layer(M.Lorentz.expmap0(u, 1.0), adj, L.LayerParams(W, activation="selu"), M.LORENTZ)
            return _proj(a, R1) + _proj(b, R2)
        return fn, {"H": pts(rng), "W": rng.standard_normal((3, 3)) * 0.5, "u": rng.standard_normal((4, 3)) * 0.5}

    @case("hgcn_linear")
    def _(rng):
        R = rng.standard_normal((4, 3))
        return (lambda H, W, b, K: _proj(L.hgcn_linear(H, L.LayerParams(W, b, K)), R)), \
            {"H": pts(rng), "W": rng.standard_normal((3, 3)) * 0.5, "b": rng.standard_normal(3) * 0.3,
             "K": rng.uniform(0.8, 1.5, 1)}

    @case("hgcn_attention_aggregate")
    def _(rng):
        R = rng.standard_normal((4, 3))
        return (lambda H, a, K: _proj(L.hgcn_attention_aggregate(
            H, adj, L.LayerParams(np.eye(3), K=K, attention=a)), R)), \
            {"H": pts(rng), "a": rng.standard_normal(6), "K": rng.uniform(0.8, 1.5, 1)}

    @case("curvature_change")
    def _(rng):
        R = rng.standard_normal((4, 3))
        return (lambda H, k1, k2: _proj(L.curvature_change(H, k1, k2), R)), \
            {"H": pts(rng), "k1": np.array([1.0]), "k2": rng.uniform(0.5, 2.0, 1)}

    @case("h2h_lorentz_linear")
    def _(rng):
        R = rng.standard_normal((4, 4))
        return (lambda u, W: _proj(L.h2h_lorentz_linear(M.Lorentz.expmap0(u, 1.0), W, check=False), R)), \
            {"u": rng.standard_normal((4, 3)), "W": rng.standard_normal((3, 3))}

    @case("h2h_aggregate")
    def _(rng):
        R = rng.standard_normal((4, 4))
        return (lambda u: _proj(L.h2h_aggregate(M.Lorentz.expmap0(u, 1.0), adj, 1.0, "selu", 3.0), R)), \
            {"u": away(rng, (4, 3), 0.2, 0.8)}

    @case("hgcae_layer")
    def _(rng):
        R = rng.standard_normal((4, 3))
        return (lambda H, W, b, a: _proj(L.hgcae_layer(H, adj, L.LayerParams(W, b, 1.0, a, "identity")), R)), \
            {"H": pts(rng), "W": rng.standard_normal((3, 3)) * 0.5, "b": rng.standard_normal(3) * 0.2,
             "a": rng.standard_normal(6)}

    @case("fermi_dirac_decoder")
    def _(rng):
        R = rng.standard_normal((3, 1))
        pairs = np.array([[0, 1], [1, 3], [2, 0]])
        return (lambda H: _proj(L.fermi_dirac_decoder(H, pairs, K=1.0, model=M.POINCARE), R)), {"H": pts(rng)}

    @case("tangent logistic head")
    def _(rng):
        y = np.array([0, 1, 1, 0])
        return (lambda H, w, b: L.bce_logits(L.logreg_logits(M.PoincareBall.logmap0(H, 1.0), w, b), y)), \
            {"H": pts(rng), "w": rng.standard_normal(3), "b": rng.standard_normal(1)}

    @case("hgcae_loss")
    def _(rng):
        neg = np.array([[0, 3], [1, 3], [3, 1], [0, 3]])
        return (lambda H, Xr, K: hgcae_loss(H, g, 0.7, K, recon=Xr, neg=neg)), \
            {"H": pts(rng), "Xr": rng.standard_normal((4, 3)), "K": rng.uniform(0.8, 1.5, 1)}

    return cases


def gradient_suite(points=100, seed=0, names=None, conditioning=False) -> list[CheckResult]:
    out = []
    for name, builder in gradient_cases().items():
        if names is not None and name not in names:
            continue
        rng = np.random.default_rng([seed, sum(map(ord, name))])
        t0 = time.perf_counter()
        worst, where = 0.0, None
        for _ in range(points):
            fn, point = builder(rng)
            rep = F.check_gradient(fn, point, conditioning=conditioning)
            if rep.max_rel_err >= worst:
                worst, where = rep.max_rel_err, rep.worst_coordinate
        out.append(CheckResult(name, worst < 1e-4, f"max rel err {worst:.2e} at {where}",
                               time.perf_counter() - t0))
    return out
