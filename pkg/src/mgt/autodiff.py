"""Minimal dense-tensor reverse-mode autodiff.

Tensors wrap float64 numpy arrays and record a backward closure per
primitive.  Only the primitives the model actually needs are provided.
Every primitive checks its output for NaN/Inf and raises NumericError
instead of propagating silently.

Conventions:
  - arccos clamps its forward input to [-1, 1]; the backward derivative is
    evaluated at the input clamped to [-1 + 1e-7, 1 - 1e-7] so it stays
    finite at the domain boundary.
  - division and sqrt backward rules carry a 1e-12 guard.
  - max-reduce breaks ties to the lowest index and routes the gradient to
    the argmax positions only.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import ConfigError, NumericError

EPS_GUARD = 1e-12
ARCCOS_DERIV_CLAMP = 1e-7

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite output from primitive '{op}'")


class Tensor:
    """Immutable-by-convention float64 array node in an autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def item(self) -> float:
        if self.data.size != 1:
            raise ConfigError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-accumulate gradients from this scalar node."""
        if self.data.size != 1:
            raise ConfigError("backward() requires a scalar output")
        topo = _toposort(self)
        _accum(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _accum(t: Tensor, g: np.ndarray) -> None:
    g = _reduce_to(g, t.data.shape)
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over broadcast axes so it matches the parent shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _node(data: np.ndarray, op: str, parents: tuple, backward) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._op = op
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting rules)

def add(a: Tensor, b: Tensor) -> Tensor:
    out = _node(a.data + b.data, "add", (a, b), None)

    def bw():
        if a.requires_grad:
            _accum(a, out.grad)
        if b.requires_grad:
            _accum(b, out.grad)

    out._backward = bw if out.requires_grad else None
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = _node(a.data - b.data, "sub", (a, b), None)

    def bw():
        if a.requires_grad:
            _accum(a, out.grad)
        if b.requires_grad:
            _accum(b, -out.grad)

    out._backward = bw if out.requires_grad else None
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = _node(a.data * b.data, "mul", (a, b), None)

    def bw():
        if a.requires_grad:
            _accum(a, out.grad * b.data)
        if b.requires_grad:
            _accum(b, out.grad * a.data)

    out._backward = bw if out.requires_grad else None
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        quotient = a.data / b.data
    out = _node(quotient, "div", (a, b), None)

    def bw():
        denom = np.where(np.abs(b.data) < EPS_GUARD,
                         np.sign(b.data) * EPS_GUARD + (b.data == 0) * EPS_GUARD,
                         b.data)
        if a.requires_grad:
            _accum(a, out.grad / denom)
        if b.requires_grad:
            _accum(b, -out.grad * a.data / (denom * denom))

    out._backward = bw if out.requires_grad else None
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ConfigError("matmul requires operands with ndim >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ConfigError(
            f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = _node(a.data @ b.data, "matmul", (a, b), None)

    def bw():
        if a.requires_grad:
            _accum(a, out.grad @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            _accum(b, np.swapaxes(a.data, -1, -2) @ out.grad)

    out._backward = bw if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# elementwise nonlinearities

def exp(a: Tensor) -> Tensor:
    out = _node(np.exp(a.data), "exp", (a,), None)

    def bw():
        _accum(a, out.grad * out.data)

    out._backward = bw if out.requires_grad else None
    return out


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        logged = np.log(a.data)
    out = _node(logged, "log", (a,), None)

    def bw():
        _accum(a, out.grad / np.maximum(a.data, EPS_GUARD))

    out._backward = bw if out.requires_grad else None
    return out


def sqrt(a: Tensor) -> Tensor:
    out = _node(np.sqrt(a.data), "sqrt", (a,), None)

    def bw():
        _accum(a, out.grad * 0.5 / (out.data + EPS_GUARD))

    out._backward = bw if out.requires_grad else None
    return out


def arccos(a: Tensor) -> Tensor:
    clamped = np.clip(a.data, -1.0, 1.0)
    out = _node(np.arccos(clamped), "arccos", (a,), None)

    def bw():
        c = np.clip(a.data, -1.0 + ARCCOS_DERIV_CLAMP, 1.0 - ARCCOS_DERIV_CLAMP)
        _accum(a, out.grad * (-1.0 / np.sqrt(1.0 - c * c)))

    out._backward = bw if out.requires_grad else None
    return out


def relu(a: Tensor) -> Tensor:
    out = _node(np.maximum(a.data, 0.0), "relu", (a,), None)

    def bw():
        _accum(a, out.grad * (a.data > 0.0))

    out._backward = bw if out.requires_grad else None
    return out


def gelu(a: Tensor) -> Tensor:
    phi = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out = _node(a.data * phi, "gelu", (a,), None)

    def bw():
        pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
        _accum(a, out.grad * (phi + a.data * pdf))

    out._backward = bw if out.requires_grad else None
    return out


def maximum_scalar(a: Tensor, floor: float) -> Tensor:
    """Elementwise max with a constant; gradient passes where a > floor."""
    out = _node(np.maximum(a.data, floor), "maximum_scalar", (a,), None)

    def bw():
        _accum(a, out.grad * (a.data > floor))

    out._backward = bw if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# reductions

def rsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = _node(a.data.sum(axis=axis, keepdims=keepdims), "sum", (a,), None)

    def bw():
        g = out.grad
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape))

    out._backward = bw if out.requires_grad else None
    return out


def rmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = _node(a.data.mean(axis=axis, keepdims=keepdims), "mean", (a,), None)
    count = a.data.size / max(out.data.size, 1)

    def bw():
        g = out.grad
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape) / count)

    out._backward = bw if out.requires_grad else None
    return out


def rmax(a: Tensor, axis: int, keepdims=False) -> Tensor:
    """Max-reduce along one axis; gradient routed to the first argmax."""
    data = a.data.max(axis=axis, keepdims=keepdims)
    argmax = a.data.argmax(axis=axis)  # first occurrence = lowest index
    out = _node(data, "max", (a,), None)

    def bw():
        g = out.grad
        if not keepdims:
            g = np.expand_dims(g, axis)
        mask = np.zeros_like(a.data)
        np.put_along_axis(mask, np.expand_dims(argmax, axis), 1.0, axis=axis)
        _accum(a, mask * g)

    out._backward = bw if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# structured ops

def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = _node(s, "softmax_rows", (a,), None)

    def bw():
        g = out.grad
        _accum(a, s * (g - (g * s).sum(axis=-1, keepdims=True)))

    out._backward = bw if out.requires_grad else None
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-10) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if gain.data.shape != (x.data.shape[-1],) or bias.data.shape != (x.data.shape[-1],):
        raise ConfigError("layer_norm affine parameters must match the feature width")
    mu = rmean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = rmean(mul(xc, xc), axis=-1, keepdims=True)
    xhat = div(xc, sqrt(add(var, Tensor(eps))))
    return add(mul(xhat, gain), bias)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = _node(np.concatenate([t.data for t in tensors], axis=axis),
                "concat", tuple(tensors), None)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * out.data.ndim
                idx[axis] = slice(lo, hi)
                _accum(t, out.grad[tuple(idx)])

    out._backward = bw if out.requires_grad else None
    return out


def gather(a: Tensor, indices, axis: int = 0) -> Tensor:
    indices = np.asarray(indices, dtype=np.int64)
    out = _node(np.take(a.data, indices, axis=axis), "gather", (a,), None)

    def bw():
        g = np.zeros_like(a.data)
        gmoved = np.moveaxis(g, axis, 0)
        src = np.moveaxis(out.grad, axis, 0) if indices.ndim else out.grad
        np.add.at(gmoved, indices, src)
        _accum(a, g)

    out._backward = bw if out.requires_grad else None
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = _node(a.data.reshape(shape), "reshape", (a,), None)

    def bw():
        _accum(a, out.grad.reshape(a.data.shape))

    out._backward = bw if out.requires_grad else None
    return out


def transpose(a: Tensor, axes) -> Tensor:
    out = _node(np.transpose(a.data, axes), "transpose", (a,), None)
    inv = np.argsort(axes)

    def bw():
        _accum(a, np.transpose(out.grad, inv))

    out._backward = bw if out.requires_grad else None
    return out


def broadcast_to(a: Tensor, shape) -> Tensor:
    out = _node(np.broadcast_to(a.data, shape).copy(), "broadcast", (a,), None)

    def bw():
        _accum(a, out.grad)

    out._backward = bw if out.requires_grad else None
    return out
