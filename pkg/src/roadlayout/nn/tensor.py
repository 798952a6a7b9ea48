"""Reverse-mode autodiff on float64 numpy arrays, at most 4 dimensions.

Each operation builds a closure that routes the output gradient back to its
inputs; backward() runs them in reverse topological order. Broadcasting is
supported only as far as the models need it (bias vectors, blend weights):
gradients are summed back down to the original shape.
"""

import itertools

import numpy as np

_node_counter = itertools.count()


class Tensor:
    """Array node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 4:
            raise ValueError("tensors support at most 4 dims, got %d" % self.data.ndim)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_counter)
        self._backward = None
        self._prev = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self, seed: np.ndarray = None):
        """Accumulate gradients of this (scalar) node into the graph leaves."""
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        # Force a copy: the seed belongs to the caller, and _accum would
        # otherwise adopt (and later mutate) a caller-owned array.
        _accum(self, np.array(seed, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Convenience arithmetic; heavier ops live in ops.py.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def __repr__(self):
        return "Tensor(shape=%s, grad=%s)" % (self.data.shape, self.requires_grad)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _accum(t: Tensor, g: np.ndarray, owned: bool = False):
    """Add a gradient contribution to t.

    owned=True is the caller's promise that g is a fresh array no one else
    references; such arrays become the gradient buffer directly. Anything
    else (views, broadcasts, shared arrays) is copied before the buffer is
    ever mutated.
    """
    if not t.requires_grad:
        return
    if t.grad is None:
        if (
            owned
            and isinstance(g, np.ndarray)
            and g.base is None
            and g.shape == t.data.shape
            and g.dtype == np.float64
        ):
            t.grad = g
        else:
            t.grad = np.array(np.broadcast_to(g, t.data.shape), dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    if g.shape == tuple(shape):
        return g
    return g.reshape(shape)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._prev = tuple(parents)
        out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        # A reduced gradient is a fresh array; an unreduced one is g itself,
        # which both parents would otherwise share.
        ga = _unbroadcast(g, a.data.shape)
        _accum(a, ga, owned=ga is not g)
        gb = _unbroadcast(g, b.data.shape)
        _accum(b, gb, owned=gb is not g)

    return _make(data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, -g, owned=True)

    return _make(-a.data, (a,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape), owned=True)
        _accum(b, _unbroadcast(g * a.data, b.data.shape), owned=True)

    return _make(data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            "matmul shape mismatch: %s @ %s" % (a.data.shape, b.data.shape)
        )
    data = a.data @ b.data

    def backward(g):
        _accum(a, g @ b.data.T, owned=True)
        _accum(b, a.data.T @ g, owned=True)

    return _make(data, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def backward(g):
        _accum(a, g * mask, owned=True)

    return _make(np.where(mask, a.data, 0.0), (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    # Stable through both tails.
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accum(a, g * out * (1.0 - out), owned=True)

    return _make(out, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - out * out), owned=True)

    return _make(out, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape

    def backward(g):
        _accum(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accum(a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, np.full(a.data.shape, float(g)), owned=True)

    return _make(a.data.sum(), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        _accum(a, np.full(a.data.shape, float(g) / n), owned=True)

    return _make(a.data.mean(), (a,), backward)


def take_rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along axis 0."""
    if not 0 <= start < stop <= a.data.shape[0]:
        raise ValueError(
            "row slice [%d:%d) outside axis of length %d" % (start, stop, a.data.shape[0])
        )

    def backward(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        _accum(a, full, owned=True)

    return _make(a.data[start:stop].copy(), (a,), backward)


def concat(parts, axis: int = 0) -> Tensor:
    parts = list(parts)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(p, g[tuple(idx)])

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


def stack_rows(parts) -> Tensor:
    """Concatenate along a new leading axis handled as axis-0 blocks."""
    return concat(parts, axis=0)
