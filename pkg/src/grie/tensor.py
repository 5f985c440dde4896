"""Minimal dense tensor engine with reverse-mode gradients.

Values are numpy arrays (float32 by default, float64 propagates for oracle
tests). Every operation records its inputs and a backward rule on an eager
tape; ``backward`` walks the tape once and frees it. There is no implicit
broadcasting: shapes must match exactly, and alignment is done explicitly
with ``reshape`` / ``repeat``. ``scale`` / ``add_const`` are the only
scalar shortcuts.
"""

from __future__ import annotations

import math

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense n-d value, optionally participating in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the module-level functions are the real API
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)


def _result(data, parents, backward_fn) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def add_const(a: Tensor, c) -> Tensor:
    """Add a scalar or a constant (non-tracked) same-shape array."""
    c = np.asarray(c, dtype=a.dtype)
    if c.ndim and c.shape != a.shape:
        raise ValueError(f"add_const: shape mismatch {a.shape} vs {c.shape}")
    return _result(a.data + c, (a,), lambda g: (g,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0)
    return _result(y, (a,), lambda g: (g * (a.data > 0),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,))


def power(a: Tensor, p: float) -> Tensor:
    """Elementwise a**p for a constant exponent."""
    p = float(p)
    y = a.data**p
    return _result(y, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(int(x) for x in axes)
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def repeat(a: Tensor, times: int, axis: int) -> Tensor:
    """Tile a length-1 axis to ``times``; the explicit stand-in for broadcasting."""
    if a.shape[axis] != 1:
        raise ValueError(f"repeat: axis {axis} of shape {a.shape} must have extent 1")
    return _result(
        np.repeat(a.data, int(times), axis=axis),
        (a,),
        lambda g: (g.sum(axis=axis, keepdims=True),),
    )


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _result(data, tensors, backward)


def tslice(a: Tensor, key) -> Tensor:
    """Basic slicing (ints and slices); gradient scatters back into place."""
    data = a.data[key]

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    return _result(data, (a,), backward)


# ---------------------------------------------------------------------------
# reductions


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk, a.shape).copy(),)

    return _result(y, (a,), backward)


def logsumexp(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Numerically stable log-sum-exp along one axis (max-shifted)."""
    if a.shape[axis] == 0:
        raise ValueError(f"logsumexp: empty axis {axis} of shape {a.shape}")
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    yk = m + np.log(np.sum(np.exp(a.data - m), axis=axis, keepdims=True))
    y = yk if keepdims else np.squeeze(yk, axis=axis)

    def backward(g):
        soft = np.exp(a.data - yk)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * soft,)

    return _result(y, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _result(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul over a leading batch axis: (B,m,k) @ (B,k,n)."""
    if (
        a.data.ndim != 3
        or b.data.ndim != 3
        or a.shape[0] != b.shape[0]
        or a.shape[2] != b.shape[1]
    ):
        raise ValueError(f"bmm: incompatible shapes {a.shape} and {b.shape}")
    return _result(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.transpose(0, 2, 1), a.data.transpose(0, 2, 1) @ g),
    )


def lookup(table: Tensor, indices) -> Tensor:
    """Gather rows of a 2-d table; gradient scatter-adds into the gathered rows."""
    if table.data.ndim != 2:
        raise ValueError(f"lookup: table must be 2-d, got shape {table.shape}")
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    n_rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        bad = int(idx[(idx < 0) | (idx >= n_rows)][0])
        raise IndexError(f"lookup: index {bad} out of range for table with {n_rows} rows")
    y = table.data[idx] if idx.size else np.zeros((0, table.shape[1]), dtype=table.dtype)

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _result(y, (table,), backward)


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (C_in,H,W) with (C_out,C_in,kh,kw) kernels."""
    if x.data.ndim != 3 or kernels.data.ndim != 4:
        raise ValueError(f"conv2d: expected 3-d input and 4-d kernels, got {x.shape}, {kernels.shape}")
    c_in, h, w = x.shape
    c_out, kc, kh, kw = kernels.shape
    if kc != c_in:
        raise ValueError(f"conv2d: kernel channels {kc} do not match input channels {c_in}")
    stride = int(stride)
    padding = int(padding)
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    h_out = (hp - kh) // stride + 1
    w_out = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # (C_in, h_out, w_out, kh, kw)
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(c_in * kh * kw, h_out * w_out)
    cols = np.ascontiguousarray(cols)
    kmat = kernels.data.reshape(c_out, c_in * kh * kw)
    y = (kmat @ cols).reshape(c_out, h_out, w_out)

    def backward(g):
        g2 = g.reshape(c_out, h_out * w_out)
        gk = (g2 @ cols.T).reshape(kernels.shape)
        gcols = (kmat.T @ g2).reshape(c_in, kh, kw, h_out, w_out)
        gxp = np.zeros_like(xp)
        for ki in range(kh):
            for kj in range(kw):
                gxp[
                    :,
                    ki : ki + stride * (h_out - 1) + 1 : stride,
                    kj : kj + stride * (w_out - 1) + 1 : stride,
                ] += gcols[:, ki, kj]
        gx = gxp[:, padding : padding + h, padding : padding + w] if padding else gxp
        return (gx, gk)

    return _result(y, (x, kernels), backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if p <= 0.0:
        return a
    if p >= 1.0:
        raise ValueError(f"dropout: rate must be < 1, got {p}")
    mask = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor, retain_graph: bool = False):
    """Populate ``grad`` on every requires_grad ancestor of a scalar loss.

    Grads accumulate across calls (+=); the tape is freed afterwards unless
    ``retain_graph`` is set.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # iterative topo sort; LSTM/CRF chains exceed the recursion limit
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))

    seed = np.ones_like(loss.data)
    loss.grad = seed if loss.grad is None else loss.grad + seed
    for node in reversed(topo):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g.copy() if parent.grad is None else parent.grad + g
        if not retain_graph:
            node._parents = ()
            node._backward = None


# ---------------------------------------------------------------------------
# parameters and optimization


class Parameter:
    """A named trainable tensor; names key the checkpoint and optimizer state."""

    __slots__ = ("name", "tensor")

    def __init__(self, name: str, data):
        self.name = name
        self.tensor = data if isinstance(data, Tensor) else Tensor(data)
        self.tensor.requires_grad = True

    @property
    def data(self):
        return self.tensor.data

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={tuple(self.tensor.shape)})"


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32):
    """uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weight draw."""
    bound = 1.0 / math.sqrt(max(int(fan_in), 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def zero_grads(params):
    for p in params:
        p.tensor.grad = None


class Adam:
    """Adam with bias correction; ``step`` consumes and clears the grads."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m = {p.name: np.zeros_like(p.data) for p in self.params}
        self._v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self):
        for p in self.params:
            if p.tensor.grad is None:
                raise ValueError(f"adam step: parameter {p.name!r} has no gradient")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p in self.params:
            g = p.tensor.grad.astype(p.data.dtype, copy=False)
            m = self._m[p.name]
            v = self._v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.tensor.data = p.tensor.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.tensor.grad = None
