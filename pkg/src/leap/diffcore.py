"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every op on a tensor that requires gradients records its parents and a
backward closure. ``backward(loss)`` orders the recorded graph
topologically, runs each closure exactly once, and then releases the
graph, so the next forward pass builds a fresh tape.
"""
from __future__ import annotations

import math

import numpy as np

CHECK_FINITE = True
LEAKY_SLOPE = 0.2

_grad_enabled = True


class DiffError(Exception):
    pass


class ShapeError(DiffError):
    pass


class DomainError(DiffError):
    pass


class NonFiniteError(DiffError):
    pass


class no_grad:
    """Context manager that suspends graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev


def _check(data):
    if CHECK_FINITE and not np.isfinite(data).all():
        raise NonFiniteError("non-finite value produced")
    return data


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    nlead = grad.ndim - len(shape)
    if nlead:
        grad = grad.sum(axis=tuple(range(nlead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shapes(a, b):
    try:
        return np.broadcast_shapes(a, b)
    except ValueError as err:
        raise ShapeError(f"cannot broadcast {a} with {b}") from err


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = _check(arr)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

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
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    def item(self):
        return float(self.data.item())

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- arithmetic ---------------------------------------------------
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
        return pow(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def abs(self):
        return tabs(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _make(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _acc(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.data.shape)
    else:
        t.grad += g


# -- binary ops -----------------------------------------------------------
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a.shape, b.shape)

    def bw(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a.shape, b.shape)

    def bw(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a.shape, b.shape)

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a.shape, b.shape)
    if np.any(b.data == 0):
        raise DomainError("division by zero")
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw)


def matmul(a, b):
    """Matrix product with numpy broadcasting over leading batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul dimension mismatch {a.shape} @ {b.shape}")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs at least 2-d operands")
    out = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
            _acc(b, gb)

    return _make(out, (a, b), bw)


def linear(x, w, b=None):
    """``x @ w + b`` for x of shape (..., k) and w of shape (k, m)."""
    x = as_tensor(x)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: {x.shape} vs weight {w.shape}")
    k, m = w.shape
    x2 = x.data.reshape(-1, k)
    out = x2 @ w.data
    if b is not None:
        out = out + b.data
    out = out.reshape(x.shape[:-1] + (m,))
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.reshape(-1, m)
        if x.requires_grad:
            _acc(x, (g2 @ w.data.T).reshape(x.shape))
        if w.requires_grad:
            _acc(w, x2.T @ g2)
        if b is not None and b.requires_grad:
            _acc(b, g2.sum(axis=0))

    return _make(out, parents, bw)


# -- unary ops ------------------------------------------------------------
def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: _acc(a, -g))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: _acc(a, g * out))


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    return _make(np.log(a.data), (a,), lambda g: _acc(a, g / a.data))


def sqrt(a):
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of negative value")
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: _acc(a, g * 0.5 / out))


def tabs(a):
    """Absolute value; the subgradient at 0 is taken as 0."""
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: _acc(a, g * np.sign(a.data)))


def pow(a, p):
    a = as_tensor(a)
    p = float(p)
    if p != int(p) and np.any(a.data < 0):
        raise DomainError("fractional power of negative value")
    if p < 0 and np.any(a.data == 0):
        raise DomainError("negative power of zero")
    out = a.data ** p
    return _make(out, (a,), lambda g: _acc(a, g * p * a.data ** (p - 1)))


def sigmoid(a):
    a = as_tensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, (a,), lambda g: _acc(a, g * out * (1.0 - out)))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: _acc(a, g * (1.0 - out * out)))


def leaky_relu(a, slope=LEAKY_SLOPE):
    a = as_tensor(a)
    d = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * d, (a,), lambda g: _acc(a, g * d))


def softplus(a):
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    s = 1.0 / (1.0 + np.exp(-x))
    return _make(out, (a,), lambda g: _acc(a, g * s))


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient passes only where the input is inside."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: _acc(a, g * inside))


def elementwise(kind, a, b=None, slope=LEAKY_SLOPE):
    """Dispatch an elementwise op by name."""
    binary = {"add": add, "sub": sub, "mul": mul, "div": div}
    unary = {"exp": exp, "log": log, "abs": tabs, "sigmoid": sigmoid,
             "tanh": tanh, "neg": neg}
    if kind in binary:
        if b is None:
            raise ValueError(f"{kind} needs two operands")
        return binary[kind](a, b)
    if kind == "pow":
        return pow(a, b)
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    if kind in unary:
        return unary[kind](a)
    raise ValueError(f"unknown op {kind!r}")


# -- reductions and shape ops --------------------------------------------
def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, a.shape))

    return _make(out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: _acc(a, g.reshape(a.shape)))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,),
                 lambda g: _acc(a, np.transpose(g, inv)))


def _basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in items)


def getitem(a, idx):
    a = as_tensor(a)
    out = a.data[idx]
    basic = _basic_index(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        _acc(a, full)

    return _make(np.array(out, copy=True), (a,), bw)


def take_along_axis(a, idx, axis=-1):
    """Gather ``a`` along ``axis`` with an integer index array of matching rank."""
    a = as_tensor(a)
    out = np.take_along_axis(a.data, idx, axis=axis)

    def bw(g):
        full = np.zeros_like(a.data)
        if idx.shape[axis] == 1:
            np.put_along_axis(full, idx, g, axis=axis)
        else:
            # duplicate indices along the axis must accumulate
            moved = np.moveaxis(full, axis, -1)
            gi = np.moveaxis(g, axis, -1)
            ii = np.moveaxis(idx, axis, -1)
            lead = np.indices(ii.shape[:-1])
            sel = tuple(np.broadcast_to(l[..., None], ii.shape) for l in lead)
            np.add.at(moved, sel + (ii,), gi)
        _acc(a, full)

    return _make(out, (a,), bw)


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        for t, part in zip(ts, np.split(g, sizes, axis=axis)):
            _acc(t, part)

    return _make(out, tuple(ts), bw)


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        for i, t in enumerate(ts):
            _acc(t, np.take(g, i, axis=axis))

    return _make(out, tuple(ts), bw)


def where(cond, a, b):
    """Select from ``a`` where ``cond`` holds, else from ``b``; cond is constant."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(np.where(cond, g, 0.0), a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(np.where(cond, 0.0, g), b.shape))

    return _make(out, (a, b), bw)


def cumsum(a, axis=-1):
    a = as_tensor(a)

    def bw(g):
        _acc(a, np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis))

    return _make(np.cumsum(a.data, axis=axis), (a,), bw)


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _acc(a, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (a,), bw)


def log_normal(x, mu=0.0, log_sigma=0.0):
    """Elementwise Gaussian log-density."""
    x, mu, log_sigma = as_tensor(x), as_tensor(mu), as_tensor(log_sigma)
    z = (x - mu) * exp(-log_sigma)
    return -0.5 * z * z - log_sigma - 0.5 * math.log(2 * math.pi)


# -- backward -------------------------------------------------------------
def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, retain_graph=False):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if not isinstance(loss, Tensor):
        raise DiffError("loss must be a Tensor")
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise DiffError("loss is detached from any parameter")
    order = _toposort(loss)
    _acc(loss, np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._backward is not None:
            node.grad = None
            if not retain_graph:
                node._parents = ()
                node._backward = None


def grad_check(f, x, eps=1e-5):
    """Max over coordinates of |analytic - central difference| / (|analytic| + 1e-8)."""
    x = as_tensor(x)
    base = np.array(x.data, copy=True)
    probe = parameter(base)
    y = f(probe)
    if y.size != 1:
        raise ShapeError("grad_check needs a scalar-valued function")
    if not y.requires_grad:
        analytic = np.zeros_like(base)
    else:
        backward(y)
        analytic = probe.grad if probe.grad is not None else np.zeros_like(base)
    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp = float(f(Tensor(base)).data)
            flat[i] = old - eps
            fm = float(f(Tensor(base)).data)
            flat[i] = old
            numeric.reshape(-1)[i] = (fp - fm) / (2 * eps)
    err = np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)
    return float(err.max()) if err.size else 0.0


# -- optimizers -----------------------------------------------------------
class MissingGradientError(DiffError):
    pass


class Optimizer:
    def __init__(self, params, lr):
        self.params = list(params)
        self.lr = float(lr)
        self.step_count = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def _grads(self):
        missing = [p.name or i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise MissingGradientError(f"parameters without gradient: {missing[:5]}")
        return [p.grad for p in self.params]


class SGD(Optimizer):
    def step(self):
        grads = self._grads()
        for p, g in zip(self.params, grads):
            p.data -= self.lr * g
        self.step_count += 1
        self.zero_grad()

    def state_dict(self):
        return {"step": self.step_count, "lr": self.lr}

    def load_state_dict(self, state):
        self.step_count = int(state["step"])
        self.lr = float(state["lr"])


class AdamW(Optimizer):
    """Adam with decoupled weight decay."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2):
        super().__init__(params, lr)
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        grads = self._grads()
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.zero_grad()

    def state_dict(self):
        return {"step": self.step_count, "lr": self.lr, "m": self.m, "v": self.v}

    def load_state_dict(self, state):
        self.step_count = int(state["step"])
        self.lr = float(state["lr"])
        for dst, src in zip(self.m, state["m"]):
            dst[...] = src
        for dst, src in zip(self.v, state["v"]):
            dst[...] = src

