"""Riemannian SGD, Adam and AMSGrad.

Manifold parameters are ``(n, d)`` arrays whose rows are points on one
model at one curvature (a product of ``n`` copies of the manifold); each row
keeps its own scalar second moment (squared metric norm of its Riemannian
gradient), which is invariant under parallel transport. Euclidean
parameters use the usual per-coordinate Adam moments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import manifold as M


@dataclass
class Parameter:
    data: np.ndarray
    model: str | None = None  # None for Euclidean parameters
    K: float = 1.0
    name: str = ""
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.array(self.data, dtype=np.float64)

    @property
    def is_manifold(self):
        return self.model is not None


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    v_max: np.ndarray | None = None
    t: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray, manifold: bool, amsgrad: bool = False):
        v_shape = param.shape[:-1] + (1,) if manifold else param.shape
        v = np.zeros(v_shape)
        return cls(np.zeros_like(param), v, np.zeros(v_shape) if amsgrad else None, 0)


def _kernel(model):
    if model not in (M.POINCARE, M.LORENTZ):
        raise ValueError(f"Riemannian updates support poincare and lorentz, not {model!r}")
    return M.get(model)


def riemannian_grad(euclidean_grad, at, K=1.0, model=M.POINCARE):
    """Convert a Euclidean gradient at ``at`` to the Riemannian gradient."""
    g = np.asarray(euclidean_grad, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient has non-finite entries")
    return np.asarray(_kernel(model).egrad2rgrad(np.asarray(at, dtype=np.float64), g, K))


def _retract(kernel, x, step, K):
    out = kernel.expmap(x, step, K)
    return np.asarray(kernel.proj(out, K))


def rsgd_step(param, rgrad, lr, K=1.0, model=M.POINCARE):
    """One Riemannian SGD step: exp_x(-lr * rgrad), then projection."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    x = np.asarray(param, dtype=np.float64)
    g = np.asarray(rgrad, dtype=np.float64)
    if model is None:
        return x - lr * g
    kernel = _kernel(model)
    moving = np.any(g != 0, axis=-1, keepdims=True)
    out = _retract(kernel, x, -lr * g, K)
    return np.where(moving, out, x)


def radam_step(param, rgrad, state: OptimizerState, lr=0.01, beta1=0.9, beta2=0.999,
               eps=1e-8, amsgrad=False, K=1.0, model=M.POINCARE):
    """One Riemannian Adam (or AMSGrad) step; returns (new_param, new_state)."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for b in (beta1, beta2):
        if not 0.0 < b < 1.0:
            raise ValueError(f"betas must lie in (0, 1), got {b}")
    x = np.asarray(param, dtype=np.float64)
    g = np.asarray(rgrad, dtype=np.float64)
    t = state.t + 1

    if model is None:
        sq = g * g
    else:
        kernel = _kernel(model)
        sq = np.asarray(kernel.inner(x, g, g, K))
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * sq
    v_max = None
    if amsgrad:
        v_max = np.maximum(state.v_max if state.v_max is not None else 0.0, v)
        v_used = v_max
    else:
        v_used = v
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v_used / (1.0 - beta2 ** t)
    direction = m_hat / (np.sqrt(v_hat) + eps)

    if model is None:
        return x - lr * direction, OptimizerState(m, v, v_max, t)

    moving = np.any(direction != 0, axis=-1, keepdims=True)
    new = np.where(moving, _retract(kernel, x, -lr * direction, K), x)
    m_new = np.asarray(kernel.ptransp(x, new, m, K))
    if model == M.LORENTZ:
        m_new = np.asarray(kernel.proj_tan(new, m_new, K))
    m_new = np.where(moving, m_new, m)
    return new, OptimizerState(m_new, v, v_max, t)


class RiemannianSGD:
    def __init__(self, params, lr=0.01, weight_decay=0.0):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self):
        for p in self.params:
            if p.grad is None:
                continue
            g = _tangent_grad(p, self.weight_decay)
            p.data = rsgd_step(p.data, g, self.lr, p.K, p.model)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_dict(self):
        return {}


class RiemannianAdam:
    def __init__(self, params, lr=0.01, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0,
                 amsgrad=False):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        for b in betas:
            if not 0.0 < b < 1.0:
                raise ValueError(f"betas must lie in (0, 1), got {b}")
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.amsgrad = amsgrad
        self.state = [OptimizerState.zeros_like(p.data, p.is_manifold, amsgrad)
                      for p in self.params]

    def step(self):
        b1, b2 = self.betas
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = _tangent_grad(p, self.weight_decay)
            p.data, self.state[i] = radam_step(p.data, g, self.state[i], self.lr, b1, b2,
                                               self.eps, self.amsgrad, p.K, p.model)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_dict(self):
        out = {}
        for p, s in zip(self.params, self.state):
            out[p.name] = {"t": s.t, "m": s.m, "v": s.v}
            if s.v_max is not None:
                out[p.name]["v_max"] = s.v_max
        return out

    def load_state_dict(self, sd):
        for i, p in enumerate(self.params):
            s = sd[p.name]
            self.state[i] = OptimizerState(np.asarray(s["m"], float), np.asarray(s["v"], float),
                                           None if "v_max" not in s else np.asarray(s["v_max"], float),
                                           int(s["t"]))


def _tangent_grad(p: Parameter, weight_decay):
    g = np.asarray(p.grad, dtype=np.float64)
    if p.is_manifold:
        return riemannian_grad(g, p.data, p.K, p.model)
    if weight_decay:
        g = g + weight_decay * p.data
    if not np.all(np.isfinite(g)):
        raise ValueError(f"gradient of {p.name or 'parameter'} has non-finite entries")
    return g


def make_optimizer(kind: str, params, lr, weight_decay=0.0):
    kind = kind.lower()
    if kind == "rsgd":
        return RiemannianSGD(params, lr=lr, weight_decay=weight_decay)
    if kind == "radam":
        return RiemannianAdam(params, lr=lr, weight_decay=weight_decay)
    if kind == "ramsgrad":
        return RiemannianAdam(params, lr=lr, weight_decay=weight_decay, amsgrad=True)
    raise ValueError(f"unknown optimizer {kind!r}; expected rsgd, radam or ramsgrad")
