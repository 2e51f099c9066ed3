"""A small reverse-mode gradient tape over numpy arrays.

Operations performed while a :class:`GradTape` is active are appended to it
in execution order, which is already a topological order, so ``backward``
walks the list once in reverse.

    with GradTape() as tape:
        w = tape.watch(np.ones(3))
        y = (w * w).sum()
    grads = tape.backward(y)
"""
from __future__ import annotations

import numpy as np

_ACTIVE: list["GradTape"] = []


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "op")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class GradTape:
    """Records operations on watched tensors; see the module docstring."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def watch(self, value) -> Tensor:
        return Tensor(value, requires_grad=True)

    def backward(self, output: Tensor, seed=None) -> dict[int, np.ndarray]:
        """Gradients of ``output`` keyed by ``id(tensor)`` for every watched input reached."""
        grads: dict[int, np.ndarray] = {
            id(output): np.ones_like(output.data) if seed is None else np.asarray(seed, dtype=np.float64)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None) if node.parents else None
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.shape)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return grads

    def gradient(self, output: Tensor, sources) -> list[np.ndarray]:
        grads = self.backward(output)
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def _record(data, parents, backward_fn, op) -> Tensor:
    parents = tuple(parents)
    needs = any(p.requires_grad for p in parents)
    if not needs or not _ACTIVE:
        return Tensor(data, op=op)
    out = Tensor(data, True, parents, backward_fn, op)
    _ACTIVE[-1].nodes.append(out)
    return out


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _record(out, (a, b), lambda g: (g / b.data, -g * out / b.data), "div")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _record(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _record(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _record(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "sinusoid")


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _record(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sinusoid")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    out[~pos] = e / (1.0 + e)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _record(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def elu_plus_one(a) -> Tensor:
    """x + 1 for x >= 0, exp(x) otherwise."""
    a = as_tensor(a)
    pos = a.data >= 0
    e = np.exp(np.minimum(a.data, 0.0))
    out = np.where(pos, a.data + 1.0, e)
    return _record(out, (a,), lambda g: (g * np.where(pos, 1.0, e),), "feature-map")


# -- shape and reductions ----------------------------------------------------

def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)
    return _record(out, (a,), back, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)
    return _record(a.data[idx], (a,), back, "getitem")


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                   lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
        gb = np.swapaxes(a.data, -1, -2) @ g if a.ndim > 1 else np.multiply.outer(a.data, g)
        return ga, gb
    return _record(a.data @ b.data, (a, b), back, "matmul")


def cumsum(a, axis) -> Tensor:
    a = as_tensor(a)

    def back(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis), axis),)
    return _record(np.cumsum(a.data, axis=axis), (a,), back, "prefix-sum")


# -- fused ops ---------------------------------------------------------------

def binary_cross_entropy(prob, target, clip: float = 1e-12) -> Tensor:
    """Mean per-bit BCE; ``target`` is a constant array of 0/1 bits."""
    prob = as_tensor(prob)
    y = np.asarray(target, dtype=np.float64)
    if y.shape != prob.shape:
        raise ValueError(f"target shape {y.shape} does not match probabilities {prob.shape}")
    p = np.clip(prob.data, clip, 1.0 - clip)
    n = p.size
    value = -np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p))

    def back(g):
        return (g * (p - y) / (p * (1.0 - p)) / n,)
    return _record(value, (prob,), back, "binary-cross-entropy")


def causal_linear_attention(phi_q, phi_k, v, eps: float = 1e-9, chunk: int = 32) -> Tensor:
    """Causal kernelized attention over the last two axes, by chunked prefix sums.

    Leading axes are batch axes. Memory beyond inputs and outputs is
    O(chunk^2 + D_phi D_v) per batch entry plus one saved state per chunk.
    """
    phi_q, phi_k, v = as_tensor(phi_q), as_tensor(phi_k), as_tensor(v)
    q, k, vv = phi_q.data, phi_k.data, v.data
    T = q.shape[-2]
    lead = q.shape[:-2]
    E, Dv = q.shape[-1], vv.shape[-1]
    tril = np.tril(np.ones((chunk, chunk)))
    starts = list(range(0, T, chunk))
    states, masses = [], []
    S = np.zeros(lead + (E, Dv))
    z = np.zeros(lead + (E,))
    num = np.empty(lead + (T, Dv))
    den = np.empty(lead + (T,))
    for s in starts:
        e = min(s + chunk, T)
        qc, kc, vc = q[..., s:e, :], k[..., s:e, :], vv[..., s:e, :]
        A = (qc @ np.swapaxes(kc, -1, -2)) * tril[:e - s, :e - s]
        states.append(S.copy())
        masses.append(z.copy())
        num[..., s:e, :] = qc @ S + A @ vc
        den[..., s:e] = np.einsum("...te,...e->...t", qc, z) + A.sum(-1)
        S += np.swapaxes(kc, -1, -2) @ vc
        z += kc.sum(-2)
    den = den + eps
    out = num / den[..., None]

    def back(g):
        g_num = g / den[..., None]
        g_den = -np.einsum("...tj,...tj->...t", g, out) / den
        gq = np.empty_like(q)
        gk = np.empty_like(k)
        gv = np.empty_like(vv)
        U = np.zeros(lead + (E, Dv))  # sum over later chunks of q_t g_num_tᵀ
        u = np.zeros(lead + (E,))     # sum over later chunks of g_den_t q_t
        for ci in reversed(range(len(starts))):
            s = starts[ci]
            e = min(s + chunk, T)
            m = tril[:e - s, :e - s]
            qc, kc, vc = q[..., s:e, :], k[..., s:e, :], vv[..., s:e, :]
            gn, gd = g_num[..., s:e, :], g_den[..., s:e]
            A = (qc @ np.swapaxes(kc, -1, -2)) * m
            gA = (gn @ np.swapaxes(vc, -1, -2) + gd[..., :, None]) * m
            gq[..., s:e, :] = (gn @ np.swapaxes(states[ci], -1, -2) + gd[..., :, None] * masses[ci][..., None, :]
                               + gA @ kc)
            gk[..., s:e, :] = np.swapaxes(gA, -1, -2) @ qc + vc @ np.swapaxes(U, -1, -2) + u[..., None, :]
            gv[..., s:e, :] = np.swapaxes(A, -1, -2) @ gn + kc @ U
            U += np.swapaxes(qc, -1, -2) @ gn
            u += np.einsum("...t,...te->...e", gd, qc)
        return gq, gk, gv
    return _record(out, (phi_q, phi_k, v), back, "prefix-sum")
