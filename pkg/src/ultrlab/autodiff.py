"""Reverse-mode automatic differentiation over small dense float64 arrays.

Ops evaluate eagerly; each result tensor records its parents and one
vector-Jacobian closure per parent. ``backward`` replays the implicit graph
in reverse topological order and accumulates gradients into leaf tensors.
Everything is float64 and deterministic: the same inputs always produce
bit-identical forward values and gradients.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "AutodiffError",
    "ShapeMismatchError",
    "Tensor",
    "tensor",
    "add",
    "sub",
    "neg",
    "mul",
    "matmul",
    "transpose",
    "reshape",
    "elu",
    "softplus",
    "exp",
    "log",
    "reduce_sum",
    "reduce_mean",
    "softmax",
    "log_softmax",
    "layer_norm",
    "backward",
]


class AutodiffError(Exception):
    pass


class ShapeMismatchError(AutodiffError):
    """Op inputs cannot be combined; the message names the op and shapes."""


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("values", "requires_grad", "grad", "op", "_parents", "_vjps")

    def __init__(self, values, requires_grad=False, *, _op="leaf", _parents=(), _vjps=()):
        self.values = values
        self.requires_grad = requires_grad
        self.grad = None
        self.op = _op
        self._parents = _parents
        self._vjps = _vjps

    @property
    def shape(self):
        return self.values.shape

    @property
    def is_leaf(self):
        return not self._parents

    def detach(self):
        """A view of the values cut off from the graph."""
        return Tensor(self.values, requires_grad=False)

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.values.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad=False):
    """Create a leaf tensor. Non-finite values are rejected here, at the
    graph boundary, so NaN/Inf cannot enter a computation unnoticed."""
    values = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise AutodiffError("leaf tensor contains non-finite values")
    return Tensor(values, requires_grad=requires_grad)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return tensor(x)


def _result(values, op, parents, vjps):
    needs = tuple((p, vjp) for p, vjp in zip(parents, vjps) if p.requires_grad)
    if not needs:
        return Tensor(values, _op=op)
    ps, vs = zip(*needs)
    return Tensor(values, requires_grad=True, _op=op, _parents=ps, _vjps=vs)


def _unbroadcast(grad, shape):
    # Sum the gradient of a broadcast result back down to the operand shape.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.values + b.values
    except ValueError as err:
        raise ShapeMismatchError(f"add: cannot broadcast {a.shape} with {b.shape}") from err
    return _result(
        out,
        "add",
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.values - b.values
    except ValueError as err:
        raise ShapeMismatchError(f"sub: cannot broadcast {a.shape} with {b.shape}") from err
    return _result(
        out,
        "sub",
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
    )


def neg(a):
    a = _as_tensor(a)
    return _result(-a.values, "neg", (a,), (lambda g: -g,))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.values * b.values
    except ValueError as err:
        raise ShapeMismatchError(f"mul: cannot broadcast {a.shape} with {b.shape}") from err
    return _result(
        out,
        "mul",
        (a, b),
        (
            lambda g: _unbroadcast(g * b.values, a.shape),
            lambda g: _unbroadcast(g * a.values, b.shape),
        ),
    )


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim < 2 or b.values.ndim < 2:
        raise ShapeMismatchError(f"matmul: operands must be at least 2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.values, b.values)
    except ValueError as err:
        raise ShapeMismatchError(f"matmul: incompatible batch shapes {a.shape} @ {b.shape}") from err
    return _result(
        out,
        "matmul",
        (a, b),
        (
            lambda g: _unbroadcast(np.matmul(g, b.values.swapaxes(-1, -2)), a.shape),
            lambda g: _unbroadcast(np.matmul(a.values.swapaxes(-1, -2), g), b.shape),
        ),
    )


def transpose(a, axes):
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(int(i) for i in np.argsort(axes))
    return _result(
        np.transpose(a.values, axes),
        "transpose",
        (a,),
        (lambda g: np.transpose(g, inverse),),
    )


def reshape(a, shape):
    a = _as_tensor(a)
    src = a.shape
    try:
        out = a.values.reshape(shape)
    except ValueError as err:
        raise ShapeMismatchError(f"reshape: cannot view {src} as {shape}") from err
    return _result(out, "reshape", (a,), (lambda g: g.reshape(src),))


def elu(a):
    """ELU with unit scale: x for x > 0, e^x - 1 otherwise."""
    a = _as_tensor(a)
    x = a.values
    out = np.where(x > 0.0, x, np.expm1(x))
    deriv = np.where(x > 0.0, 1.0, out + 1.0)
    return _result(out, "elu", (a,), (lambda g: g * deriv,))


def softplus(a):
    """log(1 + e^x), computed stably for large |x|."""
    a = _as_tensor(a)
    x = a.values
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = _sigmoid(x)
    return _result(out, "softplus", (a,), (lambda g: g * sig,))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.values)
    return _result(out, "exp", (a,), (lambda g: g * out,))


def log(a):
    a = _as_tensor(a)
    return _result(np.log(a.values), "log", (a,), (lambda g: g / a.values,))


def reduce_sum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    src = a.shape
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, src)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g_exp, src)

    return _result(np.asarray(out), "reduce_sum", (a,), (vjp,))


def reduce_mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    src = a.shape
    count = a.values.size if axis is None else src[axis]
    out = a.values.mean(axis=axis, keepdims=keepdims)

    def vjp(g):
        g_exp = g if (axis is None or keepdims) else np.expand_dims(g, axis)
        return np.broadcast_to(g_exp, src) / count

    return _result(np.asarray(out), "reduce_mean", (a,), (vjp,))


def softmax(a, axis=-1):
    """Softmax along ``axis``; rows are shifted by their max for stability."""
    a = _as_tensor(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - inner)

    return _result(out, "softmax", (a,), (vjp,))


def log_softmax(a, axis=-1):
    """log(softmax(x)) via max-subtraction; translation-invariant in x."""
    a = _as_tensor(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def vjp(g):
        return g - sm * g.sum(axis=axis, keepdims=True)

    return _result(out, "log_softmax", (a,), (vjp,))


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean, unit variance, then scale/shift."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeMismatchError(
            f"layer_norm: gain/bias {gain.shape}/{bias.shape} do not match feature axis of {x.shape}"
        )
    mu = x.values.mean(axis=-1, keepdims=True)
    var = x.values.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.values - mu) * inv
    out = xhat * gain.values + bias.values
    lead = tuple(range(x.values.ndim - 1))

    def vjp_x(g):
        gg = g * gain.values
        m1 = gg.mean(axis=-1, keepdims=True)
        m2 = (gg * xhat).mean(axis=-1, keepdims=True)
        return (gg - m1 - xhat * m2) * inv

    return _result(
        out,
        "layer_norm",
        (x, gain, bias),
        (vjp_x, lambda g: (g * xhat).sum(axis=lead), lambda g: g.sum(axis=lead)),
    )


def _toposort(root):
    order = []
    visited = set()
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
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root):
    """Populate ``grad`` on every requires_grad leaf reachable from ``root``.

    ``root`` must be scalar (size one). Gradients accumulate across calls;
    the optimizer clears them after each step.
    """
    if not isinstance(root, Tensor):
        raise AutodiffError("backward expects a Tensor root")
    if root.values.size != 1:
        raise AutodiffError(f"backward root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        raise AutodiffError("backward root does not require grad")

    grads = {id(root): np.ones_like(root.values)}
    for node in reversed(_toposort(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, vjp in zip(node._parents, node._vjps):
            contribution = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contribution
            else:
                grads[key] = contribution
