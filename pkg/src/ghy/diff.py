"""Minimal reverse-mode differentiation on dense numpy arrays.

A :class:`Tape` records every primitive applied to its :class:`Tensor`
values in insertion order, which is also a valid topological order.
:func:`backward` walks the tape in reverse and accumulates vector-Jacobian
products; :func:`forward` replays the recorded program on new input values.

The functional ops below (``tanh``, ``norm``, ``segment_sum`` ...) accept
plain numpy arrays as well. When none of their arguments is a Tensor they
simply compute the numpy result, so geometry kernels can be written once
and used both inside and outside a tape.
"""

from __future__ import annotations

import builtins
import functools
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import scipy.sparse as sp

ARCOSH_CLAMP = 1.0 + 1e-15
ARTANH_CLAMP = 1.0 - 1e-15
NORM_FLOOR = 1e-15
MAX_RANK = 2


class ShapeError(ValueError):
    pass


@dataclass
class Node:
    id: int
    op: str
    fn: Callable | None
    args: tuple
    value: np.ndarray
    vjp: Callable | None = None
    name: str | None = None


class Tape:
    """Ordered record of primitive applications.

    A tape is single-owner: build one per forward/backward pass.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.inputs: dict[str, Tensor] = {}
        self.outputs: dict[str, Tensor] = {}
        self.leaves: list[Tensor] = []

    def __len__(self):
        return len(self.nodes)

    def release(self):
        """Drop recorded values and closures. Tapes and their tensors form
        reference cycles, so large intermediates otherwise wait for the
        cycle collector."""
        self.nodes.clear()
        self.inputs.clear()
        self.outputs.clear()
        self.leaves.clear()

    def variable(self, data, name: str | None = None) -> "Tensor":
        """Register a differentiable leaf."""
        value = np.array(data, dtype=np.float64)
        _check_rank(value, "input")
        node = Node(len(self.nodes), "input", None, (), value, name=name)
        self.nodes.append(node)
        t = Tensor(self, node)
        self.leaves.append(t)
        if name is not None:
            if name in self.inputs:
                raise ValueError(f"duplicate input name {name!r}")
            self.inputs[name] = t
        return t

    def mark(self, name: str, tensor: "Tensor") -> "Tensor":
        if tensor.tape is not self:
            raise ValueError("tensor belongs to another tape")
        self.outputs[name] = tensor
        return tensor

    def _apply(self, op: str, fn: Callable, args: tuple) -> "Tensor":
        node_id = len(self.nodes)
        vals = tuple(a.data if isinstance(a, Tensor) else a for a in args)
        try:
            out, vjp = fn(*vals)
        except ValueError as exc:
            raise ShapeError(f"node #{node_id} ({op}): {exc}") from exc
        out = np.asarray(out, dtype=np.float64)
        _check_rank(out, f"node #{node_id} ({op})")
        stored = tuple(("node", a.node.id) if isinstance(a, Tensor) else ("const", a)
                       for a in args)
        node = Node(node_id, op, fn, stored, out, vjp)
        self.nodes.append(node)
        return Tensor(self, node)


def _check_rank(value, where):
    if value.ndim > MAX_RANK:
        raise ShapeError(f"{where}: rank {value.ndim} exceeds {MAX_RANK}")


class Tensor:
    """Handle to a value recorded on a tape."""

    __array_priority__ = 1000

    def __init__(self, tape: Tape, node: Node):
        self.tape = tape
        self.node = node
        self.grad = np.zeros_like(node.value)

    @property
    def data(self) -> np.ndarray:
        return self.node.value

    @property
    def shape(self):
        return self.node.value.shape

    @property
    def ndim(self):
        return self.node.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Tensor(op={self.node.op}, shape={self.shape})"

    def __len__(self):
        return len(self.node.value)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def value_of(x):
    """Underlying numpy value of a Tensor, or x itself."""
    return x.data if isinstance(x, Tensor) else x


def _primitive(op: str):
    """Turn ``fn(*arrays) -> (out, vjp)`` into a dispatching op.

    With no Tensor argument the numpy result is returned directly.
    """

    def deco(fwd):
        @functools.wraps(fwd)
        def wrapper(*args, **kwargs):
            fn = functools.partial(fwd, **kwargs) if kwargs else fwd
            tape = None
            for a in args:
                if isinstance(a, Tensor):
                    if tape is None:
                        tape = a.tape
                    elif a.tape is not tape:
                        raise ValueError(f"{op}: operands recorded on different tapes")
            if tape is None:
                return fn(*args)[0]
            return tape._apply(op, fn, args)

        wrapper.op_name = op
        return wrapper

    return deco


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# --- arithmetic -----------------------------------------------------------

@_primitive("add")
def add(a, b):
    sa, sb = np.shape(a), np.shape(b)
    return np.add(a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))


@_primitive("sub")
def sub(a, b):
    sa, sb = np.shape(a), np.shape(b)
    return np.subtract(a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))


@_primitive("mul")
def mul(a, b):
    sa, sb = np.shape(a), np.shape(b)
    return np.multiply(a, b), lambda g: (_unbroadcast(g * b, sa), _unbroadcast(g * a, sb))


@_primitive("div")
def div(a, b):
    sa, sb = np.shape(a), np.shape(b)
    out = np.divide(a, b)
    return out, lambda g: (_unbroadcast(g / b, sa), _unbroadcast(-g * out / b, sb))


@_primitive("neg")
def neg(a):
    return np.negative(a), lambda g: (-g,)


@_primitive("power")
def power(a, p):
    if isinstance(p, Tensor):
        raise TypeError("exponent must be a constant")
    out = np.power(a, p)
    return out, lambda g: (g * p * np.power(a, p - 1), None)


@_primitive("matmul")
def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ValueError(f"matmul needs rank 1 or 2 operands, got {a.shape} @ {b.shape}")
    out = a @ b

    def vjp(g):
        if a.ndim == 2 and b.ndim == 2:
            return g @ b.T, a.T @ g
        if a.ndim == 2:
            return np.outer(g, b), a.T @ g
        if b.ndim == 2:
            return b @ g, np.outer(a, g)
        return g * b, g * a

    return out, vjp


@_primitive("transpose")
def transpose(a):
    return np.transpose(a), lambda g: (np.transpose(g),)


@_primitive("sum")
def sum(a, axis=None, keepdims=False):
    shape = np.shape(a)
    out = np.sum(a, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return out, vjp


def mean(a, axis=None, keepdims=False):
    shape = np.shape(value_of(a))
    count = np.prod(shape) if axis is None else shape[axis]
    return sum(a, axis=axis, keepdims=keepdims) / float(count)


@_primitive("getitem")
def getitem(a, key):
    shape = np.shape(a)

    def vjp(g):
        out = np.zeros(shape)
        out[key] += g
        return out, None

    return np.asarray(a)[key], vjp


@_primitive("concat")
def _concat(*parts, axis=-1):
    sizes = [np.shape(p)[axis] for p in parts]
    out = np.concatenate(parts, axis=axis)

    def vjp(g):
        splits = np.cumsum(sizes)[:-1]
        return tuple(np.split(g, splits, axis=axis))

    return out, vjp


def concat(parts, axis=-1):
    return _concat(*parts, axis=axis)


# --- elementwise ------------------------------------------------------------

@_primitive("exp")
def exp(a):
    out = np.exp(a)
    return out, lambda g: (g * out,)


@_primitive("log")
def log(a):
    return np.log(a), lambda g: (g / a,)


@_primitive("sqrt")
def sqrt(a):
    out = np.sqrt(a)
    return out, lambda g: (g / (2.0 * out),)


@_primitive("tanh")
def tanh(a):
    out = np.tanh(a)
    return out, lambda g: (g * (1.0 - out * out),)


@_primitive("cosh")
def cosh(a):
    return np.cosh(a), lambda g: (g * np.sinh(a),)


@_primitive("sinh")
def sinh(a):
    return np.sinh(a), lambda g: (g * np.cosh(a),)


@_primitive("artanh")
def artanh(a):
    a = np.asarray(a, dtype=np.float64)
    ac = np.clip(a, -ARTANH_CLAMP, ARTANH_CLAMP)
    inside = (a == ac)
    return np.arctanh(ac), lambda g: (g * inside / (1.0 - ac * ac),)


@_primitive("arcosh")
def arcosh(a):
    # value clamped at 1 so d(x, x) is exactly 0; slope evaluated at 1 + 1e-15
    a = np.asarray(a, dtype=np.float64)
    out = np.arccosh(np.maximum(a, 1.0))
    slope_at = np.maximum(a, ARCOSH_CLAMP)
    return out, lambda g: (g / np.sqrt(slope_at * slope_at - 1.0),)


@_primitive("clamp_min")
def clamp_min(a, lo):
    keep = np.asarray(a) >= lo
    return np.maximum(a, lo), lambda g: (g * keep, None)


@_primitive("clamp_max")
def clamp_max(a, hi):
    keep = np.asarray(a) <= hi
    return np.minimum(a, hi), lambda g: (g * keep, None)


@_primitive("maximum")
def maximum(a, b):
    sa, sb = np.shape(a), np.shape(b)
    pick_a = np.asarray(a) >= np.asarray(b)
    return np.maximum(a, b), lambda g: (_unbroadcast(g * pick_a, sa),
                                        _unbroadcast(g * ~pick_a, sb))


@_primitive("abs")
def abs(a):
    return np.abs(a), lambda g: (g * np.sign(a),)


@_primitive("relu")
def relu(a):
    on = np.asarray(a) > 0
    return np.where(on, a, 0.0), lambda g: (g * on,)


@_primitive("leaky_relu")
def leaky_relu(a, slope=0.2):
    on = np.asarray(a) > 0
    return np.where(on, a, slope * np.asarray(a)), lambda g: (np.where(on, g, slope * g),)


SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


@_primitive("selu")
def selu(a):
    a = np.asarray(a, dtype=np.float64)
    on = a > 0
    neg_part = SELU_ALPHA * np.expm1(np.minimum(a, 0.0))
    out = SELU_SCALE * np.where(on, a, neg_part)
    deriv = SELU_SCALE * np.where(on, 1.0, neg_part + SELU_ALPHA)
    return out, lambda g: (g * deriv,)


def identity(a):
    return a


@_primitive("sigmoid")
def sigmoid(a):
    out = _np_sigmoid(a)
    return out, lambda g: (g * out * (1.0 - out),)


@_primitive("log_sigmoid")
def log_sigmoid(a):
    a = np.asarray(a, dtype=np.float64)
    out = -np.logaddexp(0.0, -a)
    return out, lambda g: (g * _np_sigmoid(-a),)


def _np_sigmoid(a):
    a = np.asarray(a, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -a))


ACTIVATIONS = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "selu": selu,
    "identity": identity,
}


# --- reductions and graph ops -----------------------------------------------

@_primitive("norm")
def norm(a, axis=-1, keepdims=True):
    """Euclidean norm with a zero-safe gradient."""
    a = np.asarray(a, dtype=np.float64)
    n = np.sqrt(np.sum(a * a, axis=axis, keepdims=True))
    out = n if keepdims else np.squeeze(n, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * a / np.maximum(n, NORM_FLOOR),)

    return out, vjp


def _scatter(g, index, n):
    """out[i] = sum of rows g[k] with index[k] == i.

    A sparse product is much faster than np.add.at on wide rows.
    """
    g = np.asarray(g, dtype=np.float64)
    index = np.asarray(index).reshape(-1)
    S = sp.csr_matrix((np.ones(len(index)), (index, np.arange(len(index)))), shape=(n, len(index)))
    return np.asarray(S @ g)


@_primitive("gather")
def gather(a, index):
    """Rows ``a[index]``; gradient scatters back."""
    a = np.asarray(a)
    n = a.shape[0]
    return a[index], lambda g: (_scatter(g, index, n), None)


@_primitive("segment_sum")
def segment_sum(a, segment, n):
    """out[s] = sum of rows a[k] with segment[k] == s, for s in range(n)."""
    return _scatter(a, segment, n), lambda g: (np.asarray(g)[segment], None, None)


@_primitive("weighted_segment_sum")
def weighted_segment_sum(w, a, rows, cols, n, chunk=4096):
    """out[i] = sum of w[k] * a[cols[k]] over k with rows[k] == i.

    Equal to ``segment_sum(w * gather(a, cols), rows, n)`` for a column
    ``w`` without keeping the gathered rows alive on the tape.
    """
    a = np.asarray(a, dtype=np.float64)
    w_shape = np.shape(w)
    wf = np.asarray(w, dtype=np.float64).reshape(-1)
    A = sp.csr_matrix((wf, (rows, cols)), shape=(n, a.shape[0]))

    def vjp(g):
        g = np.asarray(g, dtype=np.float64)
        gw = np.empty(len(wf))
        for s in range(0, len(wf), chunk):
            r, c = rows[s:s + chunk], cols[s:s + chunk]
            gw[s:s + chunk] = np.sum(g[r] * a[c], axis=-1) if a.ndim == 2 else g[r] * a[c]
        return gw.reshape(w_shape), np.asarray(A.T @ g), None, None, None

    return np.asarray(A @ a), vjp


@_primitive("segment_softmax")
def segment_softmax(scores, segment, n):
    """Softmax of ``scores`` within each segment (row groups)."""
    s = np.asarray(scores, dtype=np.float64)
    top = np.full((n,) + s.shape[1:], -np.inf)
    np.maximum.at(top, segment, s)
    e = np.exp(s - top[segment])
    w = e / _scatter(e, segment, n)[segment]

    def vjp(g):
        wg = w * g
        return wg - w * _scatter(wg, segment, n)[segment], None, None

    return w, vjp


@_primitive("spmm")
def spmm(matrix, a):
    """Constant sparse (or dense) matrix times a."""
    return matrix @ np.asarray(a), lambda g: (None, matrix.T @ g)


def softmax(a, axis=-1):
    a_val = value_of(a)
    shift = np.max(a_val, axis=axis, keepdims=True)
    e = exp(a - shift)
    return e / sum(e, axis=axis, keepdims=True)


# --- tape driving -----------------------------------------------------------

def forward(tape: Tape, inputs: dict[str, Any] | None = None) -> dict[str, np.ndarray]:
    """Replay ``tape`` with new values for its named inputs.

    Each node is evaluated once, in insertion order. Returns the values of
    all named inputs and marked outputs.
    """
    inputs = dict(inputs or {})
    unknown = set(inputs) - set(tape.inputs)
    if unknown:
        raise KeyError(f"unknown inputs: {sorted(unknown)}")
    for node in tape.nodes:
        if node.op == "input":
            if node.name in inputs:
                new = np.array(inputs[node.name], dtype=np.float64)
                if new.shape != node.value.shape:
                    raise ShapeError(
                        f"node #{node.id} (input {node.name!r}): shape {new.shape} "
                        f"!= recorded {node.value.shape}")
                node.value = new
            continue
        vals = tuple(tape.nodes[ref].value if kind == "node" else ref
                     for kind, ref in node.args)
        try:
            out, vjp = node.fn(*vals)
        except ValueError as exc:
            raise ShapeError(f"node #{node.id} ({node.op}): {exc}") from exc
        node.value = np.asarray(out, dtype=np.float64)
        node.vjp = vjp
    result = {name: t.data for name, t in tape.inputs.items()}
    result.update({name: t.data for name, t in tape.outputs.items()})
    return result


def backward(tape: Tape, seed) -> dict[str, np.ndarray]:
    """Accumulate d(seed)/d(input) into every leaf's ``grad``.

    ``seed`` is a scalar Tensor on ``tape`` or the name of a marked output.
    Returns gradients of the named inputs.
    """
    if isinstance(seed, str):
        seed = tape.outputs[seed]
    if seed.tape is not tape:
        raise ValueError("seed belongs to another tape")
    if seed.data.size != 1:
        raise ValueError(f"seed must be scalar, got shape {seed.shape}")

    grads: dict[int, np.ndarray] = {seed.node.id: np.ones_like(seed.data)}
    for node in reversed(tape.nodes[: seed.node.id + 1]):
        if node.op == "input" or node.id not in grads:
            continue
        parts = node.vjp(grads[node.id])
        for (kind, ref), part in zip(node.args, parts):
            if kind != "node" or part is None:
                continue
            parent_shape = tape.nodes[ref].value.shape
            part = _unbroadcast(np.asarray(part, dtype=np.float64), parent_shape)
            if ref in grads:
                grads[ref] = grads[ref] + part
            else:
                grads[ref] = part

    leaf_grads = {}
    for t in tape.leaves:
        g = grads.get(t.node.id)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for input node #{t.node.id}")
        t.grad = t.grad + g
    for name, t in tape.inputs.items():
        leaf_grads[name] = t.grad
    return leaf_grads


def grad(fn: Callable[..., Tensor], point: dict[str, np.ndarray]) -> tuple[float, dict[str, np.ndarray]]:
    """Value and gradient of scalar ``fn(**tensors)`` at ``point``."""
    tape = Tape()
    tensors = {k: tape.variable(v, name=k) for k, v in point.items()}
    out = fn(**tensors)
    if not isinstance(out, Tensor):
        return float(np.asarray(out).reshape(())), {k: np.zeros_like(np.asarray(v, dtype=float))
                                                   for k, v in point.items()}
    grads = backward(tape, out)
    return float(out.data.reshape(())), grads


# --- finite-difference harness ----------------------------------------------

@dataclass
class GradientReport:
    max_rel_err: float
    worst_coordinate: tuple | None
    max_abs_grad: float = 0.0
    ill_conditioned: bool = False
    details: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.max_rel_err < 1e-4


def check_gradient(fn: Callable[..., Tensor], point: dict[str, Any], h: float = 1e-5,
                   floor: float = 1e-4, conditioning: bool = True) -> GradientReport:
    """Compare reverse-mode gradients of ``fn`` with central differences.

    The relative error of one coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    The report is flagged ``ill_conditioned`` when difference quotients at
    steps ``h`` and ``h/10`` disagree by more than 1e-3 relative, which is
    what happens next to the ball boundary; ``conditioning=False`` skips
    that second pass.
    """
    point = {k: np.array(v, dtype=np.float64) for k, v in point.items()}
    _, analytic = grad(fn, point)

    def f(p):
        val = fn(**p)
        val = float(np.asarray(value_of(val)).reshape(()))
        if not np.isfinite(val):
            raise FloatingPointError("function is not finite at a perturbed point")
        return val

    worst, worst_at, max_abs = 0.0, None, 0.0
    unstable = False
    for name, base in point.items():
        a_grad = analytic[name]
        for idx in np.ndindex(base.shape):
            numeric = _central(f, point, name, idx, h)
            a = float(a_grad[idx])
            max_abs = max(max_abs, builtins.abs(a))
            rel = builtins.abs(a - numeric) / max(builtins.abs(a), builtins.abs(numeric), floor)
            if rel > worst or worst_at is None:
                worst, worst_at = rel, (name, idx)
            if not conditioning:
                continue
            fine = _central(f, point, name, idx, h / 10)
            if builtins.abs(fine - numeric) > 1e-3 * max(builtins.abs(fine), builtins.abs(numeric), floor):
                unstable = True
    if not np.isfinite(max_abs):
        raise FloatingPointError("analytic gradient is not finite")
    return GradientReport(worst, worst_at, max_abs, unstable)


def _central(f, point, name, idx, h):
    shifted = dict(point)
    arr = point[name].copy()
    orig = arr[idx]
    arr[idx] = orig + h
    shifted[name] = arr
    up = f(shifted)
    arr = arr.copy()
    arr[idx] = orig - h
    shifted[name] = arr
    down = f(shifted)
    return (up - down) / (2 * h)
