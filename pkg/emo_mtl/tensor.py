"""
Dense float32 tensors with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure that pushes the upstream gradient back into them. ``backward()`` on a
scalar walks the graph in reverse topological order, summing gradients at
fan-out nodes, and frees the graph afterwards.
"""
import math

import numpy as np

from .errors import DimensionError, LabelError, ParameterError

FLOAT = np.float32
PROB_CLAMP = 1e-12
_GELU_C = math.sqrt(2.0 / math.pi)


class Tensor:
    # Make ``ndarray + Tensor`` defer to Tensor.__radd__.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        # float64 arrays are only accepted as-is so grad_check can upcast.
        if isinstance(data, np.ndarray) and data.dtype == np.float64:
            array = data
        else:
            array = np.asarray(data, dtype=FLOAT)
        self.data = array
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._op = None
        self._parents = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data, parents, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._op = op
        out._parents = tuple(p for p in parents if p.requires_grad)
        out.requires_grad = bool(out._parents)
        out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} op={self._op}>"

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(
                    f"backward() without a gradient needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        order = _topological_order(self)
        self.grad = np.array(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # Free the graph; only leaves keep their gradients.
        for node in order:
            if node._parents:
                node._parents = ()
                node._backward = None
                node.grad = None

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by constants")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def _lift(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _topological_order(root):
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


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(tensor, grad):
    if not tensor.requires_grad:
        return
    grad = _unbroadcast(grad, tensor.shape)
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=tensor.data.dtype)
    else:
        tensor.grad = tensor.grad + grad


def add(a, b):
    a, b = _lift(a), _lift(b)
    out = Tensor._from_op(a.data + b.data, (a, b), "add")
    if out.requires_grad:

        def backward(grad):
            _accumulate(a, grad)
            _accumulate(b, grad)

        out._backward = backward
    return out


def sub(a, b):
    a, b = _lift(a), _lift(b)
    out = Tensor._from_op(a.data - b.data, (a, b), "sub")
    if out.requires_grad:

        def backward(grad):
            _accumulate(a, grad)
            _accumulate(b, -grad)

        out._backward = backward
    return out


def mul(a, b):
    "Elementwise product with numpy broadcasting."
    a, b = _lift(a), _lift(b)
    out = Tensor._from_op(a.data * b.data, (a, b), "mul")
    if out.requires_grad:

        def backward(grad):
            _accumulate(a, grad * b.data)
            _accumulate(b, grad * a.data)

        out._backward = backward
    return out


def matmul(a, b):
    """
    Matrix product over the last two axes, broadcasting any leading axes.

    Raises
    ------
    DimensionError
        If either operand has fewer than two axes or the inner dimensions
        disagree.
    """
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: cannot multiply shapes {list(a.shape)} and {list(b.shape)}"
        )
    out = Tensor._from_op(np.matmul(a.data, b.data), (a, b), "matmul")
    if out.requires_grad:

        def backward(grad):
            if a.requires_grad:
                _accumulate(a, np.matmul(grad, np.swapaxes(b.data, -1, -2)))
            if b.requires_grad:
                _accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), grad))

        out._backward = backward
    return out


def reshape(x, shape):
    out = Tensor._from_op(x.data.reshape(shape), (x,), "reshape")
    if out.requires_grad:

        def backward(grad):
            _accumulate(x, grad.reshape(x.shape))

        out._backward = backward
    return out


def transpose(x, axes):
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    out = Tensor._from_op(x.data.transpose(axes), (x,), "transpose")
    if out.requires_grad:
        inverse = tuple(np.argsort(axes))

        def backward(grad):
            _accumulate(x, grad.transpose(inverse))

        out._backward = backward
    return out


def index(x, key):
    out = Tensor._from_op(x.data[key], (x,), "index")
    if out.requires_grad:

        def backward(grad):
            full = np.zeros_like(x.data)
            np.add.at(full, key, grad)
            _accumulate(x, full)

        out._backward = backward
    return out


def tensor_sum(x, axis=None, keepdims=False):
    out = Tensor._from_op(
        np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), "sum"
    )
    if out.requires_grad:

        def backward(grad):
            if axis is not None and not keepdims:
                grad = np.expand_dims(grad, axis)
            _accumulate(x, np.broadcast_to(grad, x.shape))

        out._backward = backward
    return out


def mean(x, axis=None, keepdims=False):
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(tensor_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(logits, axis=-1):
    """
    Softmax over ``axis``, stabilised by subtracting the row maximum.

    The result remembers its input so :func:`cross_entropy` can apply the
    fused softmax/cross-entropy gradient.
    """
    logits = _lift(logits)
    if logits.ndim == 0 or logits.shape[axis] < 1:
        raise DimensionError(f"softmax: empty class axis in shape {list(logits.shape)}")
    shifted = logits.data - logits.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / exps.sum(axis=axis, keepdims=True)
    out = Tensor._from_op(probs, (logits,), "softmax")
    out._softmax_input = logits
    out._softmax_axis = axis
    if out.requires_grad:

        def backward(grad):
            inner = (grad * probs).sum(axis=axis, keepdims=True)
            _accumulate(logits, probs * (grad - inner))

        out._backward = backward
    return out


def cross_entropy(probabilities, labels):
    """
    Mean negative log-likelihood of ``labels`` under ``probabilities``.

    Probabilities are clamped at 1e-12 inside the log. When the
    probabilities come straight out of :func:`softmax` the gradient skips the
    softmax node and flows to the logits as ``(p - onehot) / B``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if probabilities.ndim != 2:
        raise DimensionError(
            f"cross_entropy: expected [B x C] probabilities, got {list(probabilities.shape)}"
        )
    batch, classes = probabilities.shape
    if batch == 0 or labels.shape != (batch,):
        raise DimensionError(
            f"cross_entropy: {labels.shape[0] if labels.ndim else 0} labels "
            f"for a batch of {batch}"
        )
    bad = np.flatnonzero((labels < 0) | (labels >= classes))
    if bad.size:
        raise LabelError(
            f"label {int(labels[bad[0]])} at index {int(bad[0])} is outside [0, {classes})"
        )
    rows = np.arange(batch)
    picked = probabilities.data[rows, labels]
    clamped = np.maximum(picked, PROB_CLAMP)
    loss = -np.mean(np.log(clamped))

    fused = probabilities._op == "softmax" and probabilities._softmax_axis in (-1, 1)
    if fused:
        source = probabilities._softmax_input
        out = Tensor._from_op(np.asarray(loss), (source,), "cross_entropy")
        if out.requires_grad:
            probs = probabilities.data

            def backward(grad):
                delta = probs.copy()
                delta[rows, labels] -= 1.0
                _accumulate(source, delta * (grad / batch))

            out._backward = backward
        return out

    out = Tensor._from_op(np.asarray(loss), (probabilities,), "cross_entropy")
    if out.requires_grad:

        def backward(grad):
            delta = np.zeros_like(probabilities.data)
            live = picked > PROB_CLAMP
            delta[rows[live], labels[live]] = -1.0 / (batch * picked[live])
            _accumulate(probabilities, delta * grad)

        out._backward = backward
    return out


def layernorm(x, gamma, beta, eps=1e-12):
    x, gamma, beta = _lift(x), _lift(gamma), _lift(beta)
    width = x.shape[-1]
    if width < 1 or gamma.shape != (width,) or beta.shape != (width,):
        raise DimensionError(
            f"layernorm: input {list(x.shape)} with gamma {list(gamma.shape)} "
            f"and beta {list(beta.shape)}"
        )
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(variance + eps)
    normed = centered * inv_std
    out = Tensor._from_op(normed * gamma.data + beta.data, (x, gamma, beta), "layernorm")
    if out.requires_grad:

        def backward(grad):
            lead = tuple(range(grad.ndim - 1))
            _accumulate(gamma, (grad * normed).sum(axis=lead))
            _accumulate(beta, grad.sum(axis=lead))
            if x.requires_grad:
                dnormed = grad * gamma.data
                dx = inv_std * (
                    dnormed
                    - dnormed.mean(axis=-1, keepdims=True)
                    - normed * (dnormed * normed).mean(axis=-1, keepdims=True)
                )
                _accumulate(x, dx)

        out._backward = backward
    return out


def gelu(x):
    "Tanh approximation of GELU."
    x = _lift(x)
    data = x.data
    inner = _GELU_C * (data + 0.044715 * data ** 3)
    tanh = np.tanh(inner)
    out = Tensor._from_op(0.5 * data * (1.0 + tanh), (x,), "gelu")
    if out.requires_grad:

        def backward(grad):
            dinner = _GELU_C * (1.0 + 3 * 0.044715 * data ** 2)
            local = 0.5 * (1.0 + tanh) + 0.5 * data * (1.0 - tanh ** 2) * dinner
            _accumulate(x, grad * local)

        out._backward = backward
    return out


def embedding_gather(table, ids):
    """
    Look up rows of ``table``; the result has shape ``ids.shape + (d,)``.

    Duplicate ids scatter-add their gradients into the same row.
    """
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    bad = np.flatnonzero((ids < 0) | (ids >= vocab))
    if bad.size:
        raise IndexError(
            f"token id {int(ids.reshape(-1)[bad[0]])} outside vocabulary of size {vocab}"
        )
    out = Tensor._from_op(table.data[ids], (table,), "embedding")
    if out.requires_grad:

        def backward(grad):
            full = np.zeros_like(table.data)
            np.add.at(full, ids.reshape(-1), grad.reshape(-1, table.shape[1]))
            _accumulate(table, full)

        out._backward = backward
    return out


def dropout(x, p, training, rng=None):
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in training mode needs a random generator")
    keep = rng.random(x.shape) >= p
    scale = 1.0 / (1.0 - p)
    out = Tensor._from_op(x.data * keep * scale, (x,), "dropout")
    if out.requires_grad:

        def backward(grad):
            _accumulate(x, grad * keep * scale)

        out._backward = backward
    return out


def grad_check(f, inputs, h=1e-3, floor=1e-8):
    """
    Compare autograd gradients against central finite differences.

    ``f`` is called without arguments and must rebuild a scalar from the
    tensors in ``inputs`` on every call. The inputs are evaluated in float64
    for the duration of the check and restored afterwards.

    Returns
    -------
    float
        max over coordinates of ``|a - n| / max(|a|, |n|, floor)``; gradients
        below ``floor`` are in effect compared absolutely.
    """
    originals = [t.data for t in inputs]
    flags = [t.requires_grad for t in inputs]
    try:
        for tensor in inputs:
            tensor.data = tensor.data.astype(np.float64)
            tensor.requires_grad = True
            tensor.grad = None
        result = f()
        if result.size != 1:
            raise DimensionError(f"grad_check needs a scalar function, got {result.shape}")
        result.backward()
        analytic = [
            np.zeros_like(t.data) if t.grad is None else np.asarray(t.grad, np.float64)
            for t in inputs
        ]
        worst = 0.0
        for tensor, exact in zip(inputs, analytic):
            flat = tensor.data.reshape(-1)
            exact = exact.reshape(-1)
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + h
                plus = float(f().data)
                flat[i] = saved - h
                minus = float(f().data)
                flat[i] = saved
                numeric = (plus - minus) / (2 * h)
                scale = max(abs(exact[i]), abs(numeric), floor)
                worst = max(worst, abs(exact[i] - numeric) / scale)
        return worst
    finally:
        for tensor, data, flag in zip(inputs, originals, flags):
            tensor.data = data
            tensor.requires_grad = flag
            tensor.grad = None
