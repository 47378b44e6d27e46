"""Closed-form hyperbolic geometry on the Poincaré ball, the Lorentz
hyperboloid and the Klein ball.

Curvature is carried by ``K > 0``: the space has sectional curvature
``-1/K``. The Poincaré and Klein balls have radius ``sqrt(K)`` and the
hyperboloid satisfies ``<x, x>_L = -K`` with ``x[0] > 0``. With ``K = 1``
every formula reduces to the unit-curvature textbook form.

Two layers live here:

* kernels (``PoincareBall``, ``Lorentz``, ``Klein`` static methods) written
  against :mod:`ghy.diff` ops, so they accept numpy arrays *or* tape
  Tensors, including a Tensor-valued ``K`` for trainable curvature;
* the checked public API (``poincare_distance``, ``exp_map`` ...) which
  validates its arguments and its outputs and works on numpy only.

Points are stored along the last axis, so every function works on a single
vector or on an ``(n, d)`` batch.
"""

from __future__ import annotations

import numpy as np

from . import diff as F

EPS_BALL = 1e-5
TOL_HYP = 1e-6
EPS_DEN = 1e-15
MIN_NORM = 1e-15

POINCARE = "poincare"
LORENTZ = "lorentz"
KLEIN = "klein"
MODELS = (POINCARE, LORENTZ, KLEIN)


class ManifoldError(ValueError):
    """Raised for points or vectors that violate a model invariant."""


def _dot(x, y):
    return F.sum(x * y, axis=-1, keepdims=True)


def _sq(x):
    return F.sum(x * x, axis=-1, keepdims=True)


def _sqrt_k(K):
    return F.sqrt(K) if F.is_tensor(K) else np.sqrt(K)


class PoincareBall:
    name = POINCARE

    @staticmethod
    def lambda_x(x, K):
        return 2.0 / F.clamp_min(1.0 - _sq(x) / K, EPS_DEN)

    @staticmethod
    def mobius_add(x, y, K):
        c = 1.0 / K
        xy, x2, y2 = _dot(x, y), _sq(x), _sq(y)
        num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
        den = 1.0 + 2.0 * c * xy + c * c * x2 * y2
        return num / F.clamp_min(den, EPS_DEN)

    @staticmethod
    def mobius_scalar(r, x, K):
        sk = _sqrt_k(K)
        n = F.clamp_min(F.norm(x), MIN_NORM)
        return sk * F.tanh(r * F.artanh(n / sk)) * x / n

    @staticmethod
    def expmap0(v, K):
        sk = _sqrt_k(K)
        n = F.clamp_min(F.norm(v), MIN_NORM)
        return F.tanh(n / sk) * sk * v / n

    @staticmethod
    def logmap0(y, K):
        sk = _sqrt_k(K)
        n = F.clamp_min(F.norm(y), MIN_NORM)
        return sk * F.artanh(n / sk) * y / n

    @staticmethod
    def expmap(x, v, K):
        sk = _sqrt_k(K)
        n = F.clamp_min(F.norm(v), MIN_NORM)
        step = F.tanh(PoincareBall.lambda_x(x, K) * n / (2.0 * sk)) * sk * v / n
        return PoincareBall.mobius_add(x, step, K)

    @staticmethod
    def logmap(x, y, K):
        sk = _sqrt_k(K)
        sub = PoincareBall.mobius_add(-x, y, K)
        n = F.clamp_min(F.norm(sub), MIN_NORM)
        scale = 2.0 * sk / PoincareBall.lambda_x(x, K)
        return scale * F.artanh(n / sk) * sub / n

    @staticmethod
    def dist(x, y, K):
        sk = _sqrt_k(K)
        num = 2.0 * _sq(x - y) / K
        den = F.clamp_min((1.0 - _sq(x) / K) * (1.0 - _sq(y) / K), EPS_DEN)
        return sk * F.arcosh(1.0 + num / den)

    @staticmethod
    def proj(x, K):
        max_norm = (1.0 - EPS_BALL) * _sqrt_k(K)
        n = F.norm(x)
        return x * (max_norm / F.maximum(n, max_norm))

    @staticmethod
    def gyration(u, v, w, K):
        c = 1.0 / K
        u2, v2 = _sq(u), _sq(v)
        uv, uw, vw = _dot(u, v), _dot(u, w), _dot(v, w)
        a = -c * c * uw * v2 + c * vw + 2.0 * c * c * uv * vw
        b = -c * c * vw * u2 - c * uw
        d = 1.0 + 2.0 * c * uv + c * c * u2 * v2
        return w + 2.0 * (a * u + b * v) / F.clamp_min(d, EPS_DEN)

    @staticmethod
    def ptransp(x, y, v, K):
        scale = PoincareBall.lambda_x(x, K) / PoincareBall.lambda_x(y, K)
        return PoincareBall.gyration(y, -x, v, K) * scale

    @staticmethod
    def egrad2rgrad(x, g, K):
        return g * (1.0 - _sq(x) / K) ** 2 / 4.0

    @staticmethod
    def inner(x, u, v, K):
        return PoincareBall.lambda_x(x, K) ** 2 * _dot(u, v)

    @staticmethod
    def tnorm(x, v, K):
        return PoincareBall.lambda_x(x, K) * F.norm(v)

    @staticmethod
    def origin(dim, K=1.0):
        return np.zeros(dim)

    # chart maps used by tangent-space layers: ambient point <-> R^d at origin
    @staticmethod
    def to_tangent0(x, K):
        return PoincareBall.logmap0(x, K)

    @staticmethod
    def from_tangent0(v, K):
        return PoincareBall.proj(PoincareBall.expmap0(v, K), K)

    @staticmethod
    def add_bias(x, b, K):
        """x ⊕ exp_0(b) for a bias given in the tangent space at the origin."""
        return PoincareBall.proj(PoincareBall.mobius_add(x, PoincareBall.expmap0(b, K), K), K)


class Lorentz:
    name = LORENTZ

    @staticmethod
    def minkowski(x, y):
        prod = x * y
        return F.sum(prod, axis=-1, keepdims=True) - 2.0 * prod[..., :1]

    @staticmethod
    def dist(x, y, K):
        return _sqrt_k(K) * F.arcosh(-Lorentz.minkowski(x, y) / K)

    @staticmethod
    def tnorm(x, v, K=None):
        return F.sqrt(F.clamp_min(Lorentz.minkowski(v, v), 0.0) + MIN_NORM ** 2)

    @staticmethod
    def inner(x, u, v, K=None):
        return Lorentz.minkowski(u, v)

    @staticmethod
    def proj(x, K):
        rest = x[..., 1:]
        time = F.sqrt(K + _sq(rest))
        return F.concat([time, rest], axis=-1)

    @staticmethod
    def proj_tan(x, v, K):
        return v + Lorentz.minkowski(x, v) * x / K

    @staticmethod
    def expmap(x, v, K):
        sk = _sqrt_k(K)
        n = F.clamp_min(F.sqrt(F.clamp_min(Lorentz.minkowski(v, v), 0.0)), MIN_NORM)
        theta = n / sk
        return F.cosh(theta) * x + sk * F.sinh(theta) * v / n

    @staticmethod
    def logmap(x, y, K):
        xy = Lorentz.minkowski(x, y)
        u = y + xy * x / K
        nu = F.clamp_min(F.sqrt(F.clamp_min(Lorentz.minkowski(u, u), 0.0)), MIN_NORM)
        d = _sqrt_k(K) * F.arcosh(-xy / K)
        return d * u / nu

    @staticmethod
    def ptransp(x, y, v, K):
        coef = Lorentz.minkowski(y, v) / F.clamp_min(K - Lorentz.minkowski(x, y), EPS_DEN)
        return v + coef * (x + y)

    @staticmethod
    def egrad2rgrad(x, g, K):
        flipped = F.concat([-g[..., :1], g[..., 1:]], axis=-1)
        return Lorentz.proj_tan(x, flipped, K)

    @staticmethod
    def origin(dim, K=1.0):
        """Base point (sqrt(K), 0, ..., 0) of the d-dimensional hyperboloid."""
        o = np.zeros(dim + 1)
        o[0] = np.sqrt(K)
        return o

    @staticmethod
    def expmap0(v, K):
        """exp at the base point of the space-like tangent vector ``v``."""
        sk = _sqrt_k(K)
        n = F.clamp_min(F.norm(v), MIN_NORM)
        theta = n / sk
        return F.concat([sk * F.cosh(theta), sk * F.sinh(theta) * v / n], axis=-1)

    @staticmethod
    def logmap0(x, K):
        """Space-like part of log at the base point (its time part is 0)."""
        sk = _sqrt_k(K)
        rest = x[..., 1:]
        n = F.clamp_min(F.norm(rest), MIN_NORM)
        d = sk * F.arcosh(x[..., :1] / sk)
        return d * rest / n

    @staticmethod
    def to_tangent0(x, K):
        return Lorentz.logmap0(x, K)

    @staticmethod
    def from_tangent0(v, K):
        return Lorentz.proj(Lorentz.expmap0(v, K), K)

    @staticmethod
    def add_bias(x, b, K):
        """exp_x of the bias transported from the base point to x."""
        zero = b[..., :1] * 0.0
        b_full = F.concat([zero, b], axis=-1)
        o = Lorentz.origin(b.shape[-1], 1.0) * _sqrt_k(K)
        moved = Lorentz.ptransp(o, x, b_full, K)
        moved = Lorentz.proj_tan(x, moved, K)
        return Lorentz.proj(Lorentz.expmap(x, moved, K), K)


class Klein:
    name = KLEIN

    @staticmethod
    def lorentz_factor(x, K):
        return 1.0 / F.sqrt(F.clamp_min(1.0 - _sq(x) / K, EPS_DEN))

    @staticmethod
    def dist(x, y, K):
        num = 1.0 - _dot(x, y) / K
        den = F.sqrt(F.clamp_min((1.0 - _sq(x) / K) * (1.0 - _sq(y) / K), EPS_DEN))
        return _sqrt_k(K) * F.arcosh(num / den)

    @staticmethod
    def proj(x, K):
        return PoincareBall.proj(x, K)

    @staticmethod
    def midpoint(points, weights, K):
        """Weighted Einstein midpoint of the rows of ``points``."""
        gw = weights[:, None] * Klein.lorentz_factor(points, K)
        return F.sum(gw * points, axis=0) / F.sum(gw)


# --- model conversions ------------------------------------------------------

def poincare_to_lorentz(x, K):
    sk = _sqrt_k(K)
    x2 = _sq(x)
    den = F.clamp_min(K - x2, EPS_DEN)
    return F.concat([sk * (K + x2) / den, 2.0 * K * x / den], axis=-1)


def lorentz_to_poincare(x, K):
    sk = _sqrt_k(K)
    return sk * x[..., 1:] / (sk + x[..., :1])


def lorentz_to_klein(x, K):
    return _sqrt_k(K) * x[..., 1:] / x[..., :1]


def klein_to_lorentz(x, K):
    sk = _sqrt_k(K)
    g = Klein.lorentz_factor(x, K)
    return F.concat([sk * g, g * x], axis=-1)


def poincare_to_klein(x, K):
    return 2.0 * K * x / (K + _sq(x))


def klein_to_poincare(x, K):
    return x / (1.0 + F.sqrt(F.clamp_min(1.0 - _sq(x) / K, 0.0)))


_CONVERTERS = {
    (POINCARE, LORENTZ): poincare_to_lorentz,
    (LORENTZ, POINCARE): lorentz_to_poincare,
    (LORENTZ, KLEIN): lorentz_to_klein,
    (KLEIN, LORENTZ): klein_to_lorentz,
    (POINCARE, KLEIN): poincare_to_klein,
    (KLEIN, POINCARE): klein_to_poincare,
}

KERNELS = {POINCARE: PoincareBall, LORENTZ: Lorentz, KLEIN: Klein}


def get(model: str):
    try:
        return KERNELS[model]
    except KeyError:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}") from None


def convert_raw(x, source: str, target: str, K):
    """Unchecked conversion usable on Tensors."""
    if source == target:
        return x
    return _CONVERTERS[(source, target)](x, K)


# --- validation -------------------------------------------------------------

def check_curvature(K) -> float:
    K = float(K)
    if not np.isfinite(K) or K <= 0:
        raise ManifoldError(f"curvature parameter K must be positive and finite, got {K}")
    return K


def check_point(x, model: str, K=1.0, tol: float = TOL_HYP) -> np.ndarray:
    """Return ``x`` as a float array after asserting the model invariant."""
    K = check_curvature(K)
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ManifoldError("point has non-finite coordinates")
    if model in (POINCARE, KLEIN):
        r2 = np.sum(x * x, axis=-1) / K
        if np.any(r2 >= 1.0):
            raise ManifoldError(f"{model} point on or outside the boundary (|x|^2/K = {np.max(r2):.6g})")
    elif model == LORENTZ:
        if x.shape[-1] < 2:
            raise ManifoldError("Lorentz points need at least 2 coordinates")
        resid = np.abs(np.asarray(Lorentz.minkowski(x, x))[..., 0] + K) / max(K, 1.0)
        scale = np.maximum(1.0, x[..., 0] ** 2 / K)
        if np.any(resid > tol * scale):
            raise ManifoldError(f"point off the hyperboloid (residual {np.max(resid):.3g})")
        if np.any(x[..., 0] <= 0):
            raise ManifoldError("point on the lower sheet (x[0] <= 0)")
    else:
        raise ValueError(f"unknown model {model!r}")
    return x


def _check_same_dim(*arrays):
    dims = {np.shape(a)[-1] for a in arrays}
    if len(dims) != 1:
        raise ManifoldError(f"dimension mismatch: {sorted(dims)}")


def _check_tangent(base, v, model, K):
    _check_same_dim(base, v)
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ManifoldError("tangent vector has non-finite entries")
    if model == LORENTZ:
        resid = np.abs(np.asarray(Lorentz.minkowski(base, v)))
        scale = np.maximum(1.0, np.abs(base[..., :1]) * np.linalg.norm(v, axis=-1, keepdims=True))
        if np.any(resid > TOL_HYP * scale):
            raise ManifoldError(f"vector is not tangent at base (|<x,v>_L| = {np.max(resid):.3g})")
    return v


def _squeeze(x):
    x = np.asarray(x)
    return x[..., 0] if x.ndim and x.shape[-1] == 1 else x


# --- public API ---------------------------------------------------------------

def minkowski_inner(x, y) -> np.ndarray | float:
    """-x0*y0 + sum_{i>=1} xi*yi."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[-1] != y.shape[-1]:
        raise ManifoldError(f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")
    if x.shape[-1] < 2:
        raise ManifoldError("Minkowski inner product needs dimension >= 2")
    return _scalar(Lorentz.minkowski(x, y))


def _scalar(v):
    v = _squeeze(v)
    return float(v) if np.ndim(v) == 0 else v


def lorentz_distance(x, y, K=1.0):
    K = check_curvature(K)
    x, y = check_point(x, LORENTZ, K), check_point(y, LORENTZ, K)
    _check_same_dim(x, y)
    arg = -np.asarray(Lorentz.minkowski(x, y)) / K
    if np.any(arg < 1.0 - TOL_HYP * np.maximum(1.0, np.abs(arg))):
        raise ManifoldError("arcosh argument below 1: points are not on one hyperboloid")
    return _scalar(Lorentz.dist(x, y, K))


def poincare_distance(x, y, K=1.0):
    K = check_curvature(K)
    x, y = check_point(x, POINCARE, K), check_point(y, POINCARE, K)
    _check_same_dim(x, y)
    return _scalar(PoincareBall.dist(x, y, K))


def klein_distance(x, y, K=1.0):
    K = check_curvature(K)
    x, y = check_point(x, KLEIN, K), check_point(y, KLEIN, K)
    _check_same_dim(x, y)
    return _scalar(Klein.dist(x, y, K))


def distance(x, y, K=1.0, model=POINCARE):
    return {POINCARE: poincare_distance, LORENTZ: lorentz_distance,
            KLEIN: klein_distance}[model](x, y, K)


def conformal_factor(x, K=1.0):
    """2 / (1 - |x|^2 / K)."""
    K = check_curvature(K)
    x = check_point(x, POINCARE, K)
    return _scalar(PoincareBall.lambda_x(x, K))


def mobius_add(x, y, K=1.0):
    K = check_curvature(K)
    x, y = check_point(x, POINCARE, K), check_point(y, POINCARE, K)
    _check_same_dim(x, y)
    c = 1.0 / K
    den = 1.0 + 2.0 * c * np.sum(x * y, -1) + c * c * np.sum(x * x, -1) * np.sum(y * y, -1)
    if np.any(den < EPS_DEN):
        raise ManifoldError("Möbius addition denominator vanishes (antipodal pair)")
    out = PoincareBall.mobius_add(x, y, K)
    return check_point(out, POINCARE, K)


def exp_map(base, v, K=1.0, model=POINCARE):
    K = check_curvature(K)
    if model not in (POINCARE, LORENTZ):
        raise ValueError(f"exp_map supports poincare and lorentz, not {model!r}")
    base = check_point(base, model, K)
    v = _check_tangent(base, v, model, K)
    out = get(model).expmap(base, v, K)
    if model == LORENTZ:
        out = Lorentz.proj(out, K)
    elif np.any(np.sum(out * out, -1) / K >= 1.0):
        out = PoincareBall.proj(out, K)
    return check_point(out, model, K)


def log_map(base, y, K=1.0, model=POINCARE):
    K = check_curvature(K)
    if model not in (POINCARE, LORENTZ):
        raise ValueError(f"log_map supports poincare and lorentz, not {model!r}")
    base, y = check_point(base, model, K), check_point(y, model, K)
    _check_same_dim(base, y)
    out = np.asarray(get(model).logmap(base, y, K))
    same = np.all(base == y, axis=-1)
    if np.any(same):
        out = np.where(same[..., None], 0.0, out)
    return out


def tangent_norm(base, v, K=1.0, model=POINCARE):
    """Norm of ``v`` under the metric tensor at ``base``."""
    return _scalar(get(model).tnorm(np.asarray(base, float), np.asarray(v, float), K))


def parallel_transport(src, dst, v, K=1.0, model=POINCARE):
    K = check_curvature(K)
    if model not in (POINCARE, LORENTZ):
        raise ValueError(f"parallel_transport supports poincare and lorentz, not {model!r}")
    src, dst = check_point(src, model, K), check_point(dst, model, K)
    v = _check_tangent(src, v, model, K)
    if model == LORENTZ:
        if np.any(K - np.asarray(Lorentz.minkowski(src, dst)) < EPS_DEN):
            raise ManifoldError("degenerate transport")
        return np.asarray(Lorentz.proj_tan(dst, Lorentz.ptransp(src, dst, v, K), K))
    return np.asarray(PoincareBall.ptransp(src, dst, v, K))


def convert(p, target: str, K=1.0, source: str | None = None):
    """Map a point between models. ``source`` is inferred from the shape
    only when unambiguous, so pass it explicitly."""
    K = check_curvature(K)
    if source is None:
        raise ValueError("source model is required")
    for m in (source, target):
        if m not in MODELS:
            raise ValueError(f"unknown model {m!r}")
    p = check_point(p, source, K)
    out = np.asarray(convert_raw(p, source, target, K))
    if target == LORENTZ:
        out = np.asarray(Lorentz.proj(out, K))
    return check_point(out, target, K)


def einstein_midpoint(points, weights, K=1.0):
    K = check_curvature(K)
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(points) == 0:
        raise ManifoldError("einstein_midpoint needs at least one point")
    if len(points) != len(weights):
        raise ManifoldError(f"{len(points)} points but {len(weights)} weights")
    if np.any(weights < 0) or np.sum(weights) <= 0:
        raise ManifoldError("weights must be nonnegative with a positive sum")
    points = check_point(points, KLEIN, K)
    return check_point(Klein.midpoint(points, weights, K), KLEIN, K)


def project_to_manifold(p, target: str = POINCARE, K=1.0):
    K = check_curvature(K)
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ManifoldError("cannot project non-finite coordinates")
    if target in (POINCARE, KLEIN):
        out = np.asarray(PoincareBall.proj(p, K))
    elif target == LORENTZ:
        out = np.asarray(Lorentz.proj(p, K))
    else:
        raise ValueError(f"unknown model {target!r}")
    return check_point(out, target, K)
