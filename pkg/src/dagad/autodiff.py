"""Minimal matrix-level reverse-mode differentiation.

Only the handful of operations the detector needs are provided. Each op
returns a new :class:`Var` holding its value and a closure that pushes the
output gradient back to its parents. Arrays are float64 throughout.
"""
import numpy as np

from . import kernels


class Var:
    """A node in the computation graph."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Var{tag}(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if seed is None:
            if self.value.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.value)
        order = _topo(self)
        grads = {id(self): np.asarray(seed, dtype=np.float64)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node.parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _topo(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    return order[::-1]


def param(value, name=None):
    return Var(value, requires_grad=True, name=name)


def const(value):
    return value if isinstance(value, Var) else Var(value)


def detach(x):
    """Same value, no path back to whatever produced ``x``."""
    return Var(const(x).value)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    a, b = const(a), const(b)
    return Var(a.value + b.value, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b):
    a, b = const(a), const(b)
    return Var(a.value * b.value, (a, b),
               lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def scale(a, c):
    a = const(a)
    c = float(c)
    return Var(a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b):
    a, b = const(a), const(b)
    return Var(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def relu(a):
    a = const(a)
    mask = a.value > 0
    return Var(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def concat(a, b):
    """Column-wise concatenation of two matrices with equal row count."""
    a, b = const(a), const(b)
    split = a.shape[1]
    return Var(np.concatenate([a.value, b.value], axis=1), (a, b),
               lambda g: (g[:, :split], g[:, split:]))


def take_rows(a, idx):
    a = const(a)
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    return Var(a.value[idx], (a,), back)


def reshape(a, shape):
    a = const(a)
    old = a.shape
    return Var(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def softmax_rows(a):
    a = const(a)
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return Var(p, (a,), back)


def pick(probs, labels):
    """``probs[i, labels[i]]`` as a vector."""
    probs = const(probs)
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(len(labels))

    def back(g):
        out = np.zeros_like(probs.value)
        out[rows, labels] = g
        return (out,)

    return Var(probs.value[rows, labels], (probs,), back)


def clamp_min(a, lo):
    a = const(a)
    mask = a.value >= lo
    return Var(np.where(mask, a.value, lo), (a,), lambda g: (g * mask,))


def log(a):
    a = const(a)
    return Var(np.log(a.value), (a,), lambda g: (g / a.value,))


def power(a, q):
    a = const(a)
    q = float(q)
    return Var(a.value ** q, (a,), lambda g: (g * q * a.value ** (q - 1.0),))


def dot(a, w):
    """Inner product of a vector Var with a constant weight vector."""
    a = const(a)
    w = np.asarray(w, dtype=np.float64)
    return Var(np.dot(a.value, w), (a,), lambda g: (g * w,))


def head_scores(z, a):
    """Per-head projection: ``out[n, h] = sum_d z[n, h, d] * a[h, d]``."""
    z, a = const(z), const(a)
    out = np.einsum("nhd,hd->nh", z.value, a.value)

    def back(g):
        return (g[:, :, None] * a.value[None], np.einsum("nh,nhd->hd", g, z.value))

    return Var(out, (z, a), back)


def spmm(csr, x):
    """Sparse (constant) times dense; ``csr`` is an (indptr, indices, data) triple."""
    indptr, indices, data = csr
    x = const(x)
    out = kernels.spmm(indptr, indices, data, x.value)
    n = len(indptr) - 1
    rows = np.repeat(np.arange(n), np.diff(indptr))

    def back(g):
        # transpose product via the same kernel on the transposed triple
        order = np.lexsort((rows, indices))
        t_indptr = np.concatenate([[0], np.cumsum(np.bincount(indices, minlength=x.shape[0]))])
        return (kernels.spmm(t_indptr, rows[order], data[order], g),)

    return Var(out, (x,), back)


def gat_attention(csr, s_self, s_nb, z, slope):
    """Fused closed-neighbourhood attention, see :mod:`dagad.kernels`.

    Returns the aggregated ``n x heads x dim`` Var and the ``nnz x heads``
    attention weights (a plain array).
    """
    indptr, indices = csr
    s_self, s_nb, z = const(s_self), const(s_nb), const(z)
    alpha, out = kernels.gat_attention_forward(indptr, indices, s_self.value, s_nb.value,
                                               z.value, slope)

    def back(g):
        return kernels.gat_attention_backward(indptr, indices, s_self.value, s_nb.value,
                                              z.value, alpha, g, slope)

    return Var(out, (s_self, s_nb, z), back), alpha


def dropout(a, rate, rng):
    a = const(a)
    if rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return Var(a.value * keep, (a,), lambda g: (g * keep,))
