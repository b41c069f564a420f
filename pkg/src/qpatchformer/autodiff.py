"""Dense tensor engine with dynamic-graph reverse-mode automatic differentiation.

Tensors wrap float64 numpy arrays. Every operation that produces a new
Tensor records its parents and a backward closure; calling ``backward()``
on a scalar loss walks the graph in reverse topological order and
accumulates gradients into every ``requires_grad`` leaf. A loss tensor
can only be backpropagated once; build a fresh graph per step.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .exceptions import DimensionError, GraphError, ParameterError

GELU_SQRT_2_OVER_PI = 0.7978845608
GELU_CUBIC_COEF = 0.044715


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 n-d array participating in a reverse-mode autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_backward_ran")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _backward: Optional[Callable] = None):
        self.data = _as_array(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self._backward_ran = False

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- graph machinery -----------------------------------------------------

    def _needs_graph(self, *others: "Tensor") -> bool:
        return self.requires_grad or self._parents or any(
            t.requires_grad or t._parents for t in others)

    def backward(self):
        """Populate ``grad`` on every reachable tensor that wants one."""
        if self.data.size != 1:
            raise GraphError("backward requires a scalar loss, got shape %s" % (self.shape,))
        if self._backward_ran:
            raise GraphError("backward already ran on this loss; build a fresh graph")
        self._backward_ran = True

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data + other.data
        out = Tensor(out_data)
        if self._needs_graph(other):
            def bw(g):
                self._accumulate(_unbroadcast(g, self.shape))
                other._accumulate(_unbroadcast(g, other.shape))
            out._parents, out._backward = (self, other), bw
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data * other.data)
        if self._needs_graph(other):
            def bw(g):
                self._accumulate(_unbroadcast(g * other.data, self.shape))
                other._accumulate(_unbroadcast(g * self.data, other.shape))
            out._parents, out._backward = (self, other), bw
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self + (-other)

    def __rsub__(self, other):
        return Tensor(other) + (-self)

    def __pow__(self, exponent: float):
        if not isinstance(exponent, (int, float)):
            raise ParameterError("only scalar exponents are supported")
        out = Tensor(self.data ** exponent)
        if self._needs_graph():
            def bw(g):
                self._accumulate(g * exponent * self.data ** (exponent - 1))
            out._parents, out._backward = (self,), bw
        return out

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * (other ** -1.0)
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return Tensor(other) * (self ** -1.0)

    # -- reductions & reshaping ---------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims))
        if self._needs_graph():
            def bw(g):
                if axis is None:
                    self._accumulate(np.broadcast_to(g, self.shape))
                else:
                    gg = g if keepdims else np.expand_dims(g, axis)
                    self._accumulate(np.broadcast_to(gg, self.shape))
            out._parents, out._backward = (self,), bw
        return out

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.size
        else:
            count = self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape))
        if self._needs_graph():
            def bw(g):
                self._accumulate(g.reshape(self.shape))
            out._parents, out._backward = (self,), bw
        return out

    def transpose(self, axes: Sequence[int]):
        axes = tuple(axes)
        out = Tensor(np.transpose(self.data, axes))
        if self._needs_graph():
            inv = np.argsort(axes)
            def bw(g):
                self._accumulate(np.transpose(g, inv))
            out._parents, out._backward = (self,), bw
        return out


# ---------------------------------------------------------------------------
# contractions


def _validate_contract_spec(spec: str, a_shape: tuple, b_shape: tuple):
    try:
        inputs, out_spec = spec.split("->")
        a_spec, b_spec = inputs.split(",")
    except ValueError as exc:
        raise DimensionError(f"malformed contraction spec {spec!r}") from exc
    if len(a_spec) != len(a_shape) or len(b_spec) != len(b_shape):
        raise DimensionError(
            f"spec {spec!r} does not match operand ranks {len(a_shape)}/{len(b_shape)}")
    if len(set(a_spec)) != len(a_spec) or len(set(b_spec)) != len(b_spec):
        raise DimensionError("repeated index within one operand is not supported")
    dims: dict[str, int] = {}
    for letters, shape in ((a_spec, a_shape), (b_spec, b_shape)):
        for letter, size in zip(letters, shape):
            if dims.setdefault(letter, size) != size:
                raise DimensionError(
                    f"index {letter!r} bound to both {dims[letter]} and {size} in spec {spec!r}")
    for letter in a_spec:
        if letter not in out_spec and letter not in b_spec:
            raise DimensionError(f"index {letter!r} of first operand is unmatched")
    for letter in b_spec:
        if letter not in out_spec and letter not in a_spec:
            raise DimensionError(f"index {letter!r} of second operand is unmatched")
    for letter in out_spec:
        if letter not in dims:
            raise DimensionError(f"output index {letter!r} appears in no operand")
    return a_spec, b_spec, out_spec


def contract(a: Tensor, b: Tensor, spec: str) -> Tensor:
    """Binary einsum-style contraction, differentiable in both operands."""
    a_spec, b_spec, out_spec = _validate_contract_spec(spec, a.shape, b.shape)
    out = Tensor(np.einsum(spec, a.data, b.data))
    if a._needs_graph(b):
        def bw(g):
            a._accumulate(np.einsum(f"{out_spec},{b_spec}->{a_spec}", g, b.data))
            b._accumulate(np.einsum(f"{out_spec},{a_spec}->{b_spec}", g, a.data))
        out._parents, out._backward = (a, b), bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise DimensionError("matmul expects rank-2 operands")
    return contract(a, b, "ij,jk->ik")


# ---------------------------------------------------------------------------
# nonlinearities


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis``; -inf entries get exactly zero weight."""
    x = t.data
    if axis >= len(t.shape) or axis < -len(t.shape):
        raise DimensionError(f"softmax axis {axis} out of range for shape {t.shape}")
    peak = np.max(x, axis=axis, keepdims=True)
    if np.any(np.isneginf(peak)):
        raise ParameterError("softmax slice is entirely -inf")
    shifted = x - peak
    expd = np.exp(shifted)
    expd[np.isneginf(x)] = 0.0
    y = expd / expd.sum(axis=axis, keepdims=True)
    out = Tensor(y)
    if t._needs_graph():
        def bw(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            t._accumulate(y * (g - dot))
        out._parents, out._backward = (t,), bw
    return out


def relu(t: Tensor) -> Tensor:
    out = Tensor(np.maximum(t.data, 0.0))
    if t._needs_graph():
        mask = (t.data > 0).astype(np.float64)
        def bw(g):
            t._accumulate(g * mask)
        out._parents, out._backward = (t,), bw
    return out


def tanh(t: Tensor) -> Tensor:
    y = np.tanh(t.data)
    out = Tensor(y)
    if t._needs_graph():
        def bw(g):
            t._accumulate(g * (1.0 - y * y))
        out._parents, out._backward = (t,), bw
    return out


def gelu(t: Tensor) -> Tensor:
    """GELU via the tanh approximation with fixed constants."""
    x = t.data
    inner = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC_COEF * x ** 3)
    th = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + th))
    if t._needs_graph():
        def bw(g):
            d_inner = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC_COEF * x ** 2)
            grad = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * d_inner
            t._accumulate(g * grad)
        out._parents, out._backward = (t,), bw
    return out


_ACTIVATIONS = {"relu": relu, "gelu": gelu, "tanh": tanh}


def activation(t: Tensor, kind: str) -> Tensor:
    try:
        return _ACTIVATIONS[kind](t)
    except KeyError:
        raise ParameterError(f"unknown activation {kind!r}") from None


def layer_norm(t: Tensor, gamma: Tensor, beta: Tensor, axis: int = -1,
               eps: float = 1e-5) -> Tensor:
    """Normalize each slice along ``axis`` to mean 0 / variance 1, then affine."""
    if eps <= 0:
        raise ParameterError("layer_norm eps must be positive")
    mu = t.mean(axis=axis, keepdims=True)
    centered = t - mu
    var = (centered * centered).mean(axis=axis, keepdims=True)
    inv_std = (var + eps) ** -0.5
    return centered * inv_std * gamma + beta


def dropout(t: Tensor, p: float, rng: np.random.Generator,
            training: bool = True) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p); identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return t
    keep = (rng.random(t.shape) >= p).astype(np.float64) / (1.0 - p)
    out = Tensor(t.data * keep)
    if t._needs_graph():
        def bw(g):
            t._accumulate(g * keep)
        out._parents, out._backward = (t,), bw
    return out


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[..., Tensor], inputs: Iterable[Tensor],
               h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must build a scalar-valued graph from the given tensors on every
    call. Error per element is |analytic - fd| / max(1, |fd|).
    """
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    loss = f(*inputs)
    if loss.size != 1:
        raise GraphError("grad_check requires a scalar-valued function")
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]

    worst = 0.0
    for t, ana in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            f_plus = f(*inputs).item()
            flat[i] = keep - h
            f_minus = f(*inputs).item()
            flat[i] = keep
            fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(ana_flat[i] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    return worst
