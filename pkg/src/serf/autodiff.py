"""Minimal reverse-mode automatic differentiation over numpy arrays.

Scope is exactly the rendering graph: dense layers, elementwise
nonlinearities, gathers for neighbor interpolation, reductions, and the
cumulative ops used by transmittance compositing. Every op's backward rule is
itself expressed with these ops, so grad-of-grad works (needed both for the
Eikonal term and for feeding the SDF spatial gradient into the appearance
network).
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


_FLOAT_KINDS = frozenset("f")


class Tensor:
    __slots__ = ("data", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False):
        if not isinstance(data, np.ndarray):
            data = np.asarray(data)
        if data.dtype.kind not in _FLOAT_KINDS:
            data = data.astype(np.float64)
        self.data = data
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # Operator sugar; every overload routes through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _pair(a, b):
    """Coerce scalar constants to the tensor operand's dtype (no upcasting)."""
    a_t, b_t = isinstance(a, Tensor), isinstance(b, Tensor)
    if a_t and not b_t:
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if b_t and not a_t:
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return as_tensor(a), as_tensor(b)


def parameter(data) -> Tensor:
    data = np.array(data)
    if not np.issubdtype(data.dtype, np.floating):
        data = data.astype(np.float64)
    return Tensor(data, requires_grad=True)


def _make(data, parents, backward_fn) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, parents=tuple(parents), backward_fn=backward_fn, requires_grad=True)
    return Tensor(data)


def _sum_to_shape(g: Tensor, shape) -> Tensor:
    """Reduce a broadcasted cotangent back to `shape`."""
    if g.data.shape == tuple(shape):
        return g
    extra = g.data.ndim - len(shape)
    if extra > 0:
        g = sum_(g, axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.data.shape[i] != 1)
    if axes:
        g = sum_(g, axis=axes, keepdims=True)
    if g.data.shape != tuple(shape):
        g = reshape(g, shape)
    return g


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    a, b = _pair(a, b)
    if a.data.shape == b.data.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g))
    return _make(a.data + b.data, (a, b),
                 lambda g: (_sum_to_shape(g, a.shape), _sum_to_shape(g, b.shape)))


def sub(a, b):
    a, b = _pair(a, b)
    if a.data.shape == b.data.shape:
        return _make(a.data - b.data, (a, b), lambda g: (g, neg(g)))
    return _make(a.data - b.data, (a, b),
                 lambda g: (_sum_to_shape(g, a.shape), _sum_to_shape(neg(g), b.shape)))


def mul(a, b):
    a, b = _pair(a, b)
    if a.data.shape == b.data.shape:
        return _make(a.data * b.data, (a, b), lambda g: (mul(g, b), mul(g, a)))
    return _make(a.data * b.data, (a, b),
                 lambda g: (_sum_to_shape(mul(g, b), a.shape), _sum_to_shape(mul(g, a), b.shape)))


def div(a, b):
    a, b = _pair(a, b)
    if a.data.shape == b.data.shape:
        return _make(a.data / b.data, (a, b),
                     lambda g: (div(g, b), neg(div(mul(g, a), mul(b, b)))))
    return _make(a.data / b.data, (a, b),
                 lambda g: (_sum_to_shape(div(g, b), a.shape),
                            _sum_to_shape(neg(div(mul(g, a), mul(b, b))), b.shape)))


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (neg(g),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data @ b.data, (a, b),
                 lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)))


def transpose(a):
    a = as_tensor(a)
    return _make(a.data.T, (a,), lambda g: (transpose(g),))


# ---------------------------------------------------------------------------
# elementwise


def _unary(a, value, local_grad_fn):
    """local_grad_fn(a) must return the derivative as a Tensor expression."""
    return _make(value, (a,), lambda g: (mul(g, local_grad_fn()),))


def _unary_reuse(a, value, grad_from_out):
    """Unary op whose derivative is an expression of the output tensor
    (exp, sigmoid, tanh, sqrt); reusing it avoids recomputing the forward."""
    cell = []
    node = _make(value, (a,), lambda g: (mul(g, grad_from_out(cell[0])),))
    cell.append(node if node.backward_fn is not None else Tensor(value))
    return node


def sin(a):
    a = as_tensor(a)
    return _unary(a, np.sin(a.data), lambda: cos(a))


def cos(a):
    a = as_tensor(a)
    return _unary(a, np.cos(a.data), lambda: neg(sin(a)))


def exp(a):
    a = as_tensor(a)
    return _unary_reuse(a, np.exp(a.data), lambda out: out)


def log(a):
    a = as_tensor(a)
    return _unary(a, np.log(a.data), lambda: div(1.0, a))


def sqrt(a):
    a = as_tensor(a)
    return _unary_reuse(a, np.sqrt(a.data), lambda out: div(0.5, out))


def square(a):
    a = as_tensor(a)
    return _unary(a, a.data * a.data, lambda: mul(2.0, a))


def _sigmoid_np(x):
    # tanh form: stable for any x, one libm pass, no branching.
    return 0.5 * np.tanh(0.5 * x) + 0.5


def sigmoid(a):
    a = as_tensor(a)
    return _unary_reuse(a, _sigmoid_np(a.data), lambda out: mul(out, sub(1.0, out)))


def softplus(a):
    a = as_tensor(a)
    val = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    return _unary(a, val, lambda: sigmoid(a))


def tanh(a):
    a = as_tensor(a)
    return _unary_reuse(a, np.tanh(a.data), lambda out: sub(1.0, square(out)))


def clamp_min(a, lo: float):
    a = as_tensor(a)
    mask = (a.data > lo).astype(a.data.dtype)
    return _make(np.maximum(a.data, lo), (a,), lambda g: (mul(g, Tensor(mask)),))


def clamp_max(a, hi: float):
    a = as_tensor(a)
    mask = (a.data < hi).astype(a.data.dtype)
    return _make(np.minimum(a.data, hi), (a,), lambda g: (mul(g, Tensor(mask)),))


def relu(a):
    return clamp_min(a, 0.0)


def where_mask(mask: np.ndarray, a, b):
    """Constant-mask select: mask is plain numpy, not differentiated."""
    a, b = _pair(a, b)
    m = mask.astype(a.data.dtype)
    return add(mul(a, Tensor(m)), mul(b, Tensor(1.0 - m)))


def stop_gradient(a) -> Tensor:
    return Tensor(as_tensor(a).data)


# ---------------------------------------------------------------------------
# shape / indexing / reductions


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    old = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (reshape(g, old),))


def broadcast_to(a, shape):
    a = as_tensor(a)
    old = a.data.shape
    return _make(np.broadcast_to(a.data, shape).copy(), (a,),
                 lambda g: (_sum_to_shape(g, old),))


def concat(tensors, axis: int = -1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offs = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(slice_axis(g, axis, offs[i], offs[i + 1]) for i in range(len(tensors)))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def slice_axis(a, axis: int, start: int, stop: int):
    a = as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    full = a.data.shape[axis]
    return _make(a.data[tuple(idx)], (a,),
                 lambda g: (_embed_slice(g, axis, start, stop, full),))


def _embed_slice(g, axis, start, stop, full):
    g = as_tensor(g)
    shape = list(g.data.shape)
    shape[axis] = full
    out = np.zeros(shape, dtype=g.data.dtype)
    idx = [slice(None)] * len(shape)
    idx[axis] = slice(start, stop)
    out[tuple(idx)] = g.data
    return _make(out, (g,), lambda gg: (slice_axis(gg, axis, start, stop),))


def gather_rows(a, index: np.ndarray):
    """a[index] along axis 0; index is a constant integer array."""
    a = as_tensor(a)
    n = a.data.shape[0]
    return _make(a.data[index], (a,), lambda g: (scatter_rows_add(g, index, n),))


def scatter_rows_add(g, index: np.ndarray, n_rows: int):
    g = as_tensor(g)
    out = np.zeros((n_rows,) + g.data.shape[index.ndim :], dtype=g.data.dtype)
    np.add.at(out, index, g.data)
    return _make(out, (g,), lambda gg: (gather_rows(gg, index),))


def sum_(a, axis=None, keepdims: bool = False):
    a = as_tensor(a)
    old = a.data.shape

    def backward(g):
        gd = g
        if axis is not None and not keepdims:
            kshape = list(old)
            for ax in np.atleast_1d(axis):
                kshape[ax] = 1
            gd = reshape(gd, kshape)
        elif axis is None and not keepdims:
            gd = reshape(gd, (1,) * len(old))
        return (broadcast_to(gd, old),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims: bool = False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.data.shape[ax] for ax in np.atleast_1d(axis)])
    return div(sum_(a, axis=axis, keepdims=keepdims), float(n))


def cumsum(a, axis: int):
    a = as_tensor(a)

    def backward(g):
        return (flip(cumsum(flip(g, axis), axis), axis),)

    return _make(np.cumsum(a.data, axis=axis), (a,), backward)


def flip(a, axis: int):
    a = as_tensor(a)
    return _make(np.flip(a.data, axis=axis).copy(), (a,), lambda g: (flip(g, axis),))


def norm(a, axis: int = -1, keepdims: bool = False, eps: float = 1e-30):
    """Euclidean norm, softened by eps inside the sqrt so the gradient stays
    finite at zero (value error is below 1e-15 for norms above 1e-7)."""
    return sqrt(add(sum_(square(a), axis=axis, keepdims=keepdims), eps))


def dot_last(a, b, keepdims: bool = False):
    return sum_(mul(a, b), axis=-1, keepdims=keepdims)


# ---------------------------------------------------------------------------
# reverse pass


def _topo_order(root: Tensor):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, inputs, cotangent=None, create_graph: bool = False):
    """Cotangents of `output` with respect to each tensor in `inputs`.

    With create_graph=True the returned tensors are differentiable again.
    """
    single = isinstance(inputs, Tensor)
    inputs = [inputs] if single else list(inputs)
    if cotangent is None:
        cotangent = Tensor(np.ones_like(output.data))
    grads: dict[int, Tensor] = {id(output): as_tensor(cotangent)}

    def run():
        for node in reversed(_topo_order(output)):
            g = grads.pop(id(node), None)
            if g is None or node.backward_fn is None:
                if g is not None:
                    grads[id(node)] = g  # keep leaf grads
                continue
            partials = node.backward_fn(g)
            for p, pg in zip(node.parents, partials):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = add(grads[id(p)], pg)
                else:
                    grads[id(p)] = pg

    if create_graph:
        run()
    else:
        with no_grad():
            run()
    out = [grads.get(id(t)) or Tensor(np.zeros_like(t.data)) for t in inputs]
    return out[0] if single else out
