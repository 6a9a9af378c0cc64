"""Reverse-mode automatic differentiation on a recording tape.

Every op takes :class:`Value` inputs, computes its forward result eagerly with
numpy and appends a backward closure to the tape shared by its inputs.
:func:`backward` replays the closures in reverse order.

Leaves (parameters and inputs) accumulate gradients across calls to
:func:`backward`; intermediate values are reset at the start of each call.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .sparse import StructureError


class Tape:
    def __init__(self):
        self.ops = []
        self.values = []

    def _register(self, value):
        value.node_id = len(self.values)
        self.values.append(value)

    def leaf(self, data, name=None):
        """A trainable or constant input; its gradient accumulates."""
        return Value(self, np.array(data, dtype=np.float64), leaf=True, name=name)

    def constant(self, data):
        return Value(self, np.asarray(data, dtype=np.float64), leaf=True, requires_grad=False)

    def record(self, inputs, out, backward_fn):
        """Attach ``backward_fn``; ops whose inputs are all constant are not recorded."""
        out.requires_grad = any(v.requires_grad for v in inputs)
        if out.requires_grad:
            self.ops.append((inputs, out, backward_fn))
        return out

    def release(self):
        """Drop recorded ops and values so their buffers can be freed."""
        self.ops.clear()
        self.values.clear()


class Value:
    """A node on the tape holding a float64 array and its gradient."""

    def __init__(self, tape, data, leaf=False, requires_grad=True, name=None):
        self.tape = tape
        self.data = data
        self._grad = None
        self.leaf = leaf
        self.requires_grad = requires_grad
        self.name = name
        tape._register(self)

    @property
    def grad(self):
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    def accumulate(self, g):
        """Add ``g`` into the gradient, copying on first write instead of zero-filling."""
        if self._grad is None:
            self._grad = np.array(np.broadcast_to(g, self.data.shape), dtype=np.float64)
        else:
            self._grad += g

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Value(id={self.node_id}, shape={self.shape})"


class EdgeVector(Value):
    """One value per stored position of a support pattern (storage order)."""

    def __init__(self, tape, data, pattern, **kw):
        if data.shape != (pattern.nnz,):
            raise StructureError(
                f"edge vector of length {data.shape} does not match nnz={pattern.nnz}"
            )
        super().__init__(tape, data, **kw)
        self.pattern = pattern


def _new(tape, data, pattern=None):
    if pattern is not None:
        return EdgeVector(tape, data, pattern)
    return Value(tape, data)


def _tape_of(*values):
    tape = values[0].tape
    if any(v.tape is not tape for v in values):
        raise ValueError("values belong to different tapes")
    return tape


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(tape, loss):
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    for v in tape.values:
        if not v.leaf:
            v.grad = None
    loss.grad = np.ones_like(loss.data)
    for inputs, out, fn in reversed(tape.ops):
        fn(out.grad)


# dense ops ------------------------------------------------------------------

def matmul(a, b):
    tape = _tape_of(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise StructureError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Value(tape, a.data @ b.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return tape.record((a, b), out, bw)


def add(a, b):
    tape = _tape_of(a, b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise StructureError(f"add shape mismatch: {a.shape} + {b.shape}") from exc
    out = _new(tape, data, pattern=getattr(a, "pattern", None) if data.shape == a.shape else None)

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return tape.record((a, b), out, bw)


def add_bias(a, b):
    if b.data.ndim != 2 or b.shape[0] != 1 or b.shape[1] != a.shape[1]:
        raise StructureError(f"bias of shape {b.shape} does not fit {a.shape}")
    return add(a, b)


def mul(a, b):
    """Elementwise product with numpy broadcasting."""
    tape = _tape_of(a, b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise StructureError(f"mul shape mismatch: {a.shape} * {b.shape}") from exc
    out = _new(tape, data, pattern=getattr(a, "pattern", None) if data.shape == a.shape else None)

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return tape.record((a, b), out, bw)


def scale(a, c):
    c = float(c)
    out = _new(a.tape, a.data * c, pattern=getattr(a, "pattern", None))

    def bw(g):
        a.accumulate(c * g)

    return a.tape.record((a,), out, bw)


def take(a, index):
    """Single element of ``a`` as a ``1 x 1`` value."""
    flat = np.ravel_multi_index(index, a.shape) if isinstance(index, tuple) else index
    out = Value(a.tape, np.array([[a.data.ravel()[flat]]]))

    def bw(g):
        a.grad.reshape(-1)[flat] += g[0, 0]

    return a.tape.record((a,), out, bw)


def _elementwise(a, fwd, deriv):
    y = fwd(a.data)
    out = _new(a.tape, y, pattern=getattr(a, "pattern", None))

    def bw(g):
        a.accumulate(g * deriv(a.data, y))

    return a.tape.record((a,), out, bw)


def relu(a):
    return _elementwise(a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(float))


def sigmoid(a):
    def fwd(x):
        e = np.exp(-np.abs(x))
        return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _elementwise(a, fwd, lambda x, y: y * (1.0 - y))


def softplus(a):
    return _elementwise(
        a,
        lambda x: np.logaddexp(0.0, x),
        lambda x, y: 1.0 / (1.0 + np.exp(-x)),
    )


def identity(a):
    return a


ACTIVATIONS = {
    "relu": relu,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "identity": identity,
}


def activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def _softmax(x, axis):
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def softmax_rows(a):
    y = _softmax(a.data, axis=1)
    out = Value(a.tape, y)

    def bw(g):
        a.accumulate(y * (g - (g * y).sum(axis=1, keepdims=True)))

    return a.tape.record((a,), out, bw)


def softmax_vector(a):
    """Softmax over every entry of ``a`` (shape preserved)."""
    flat = a.data.ravel()
    y = _softmax(flat, axis=0).reshape(a.shape)
    out = Value(a.tape, y)

    def bw(g):
        a.accumulate(y * (g - (g * y).sum()))

    return a.tape.record((a,), out, bw)


def dropout(a, p, train, rng):
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return a
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    return mul(a, a.tape.constant(mask))


# edge ops ----------------------------------------------------------------

def to_edges(a, pattern):
    """Reinterpret an ``nnz x 1`` (or flat) value as an edge vector on ``pattern``."""
    out = EdgeVector(a.tape, a.data.reshape(-1).copy(), pattern)

    def bw(g):
        a.accumulate(g.reshape(a.shape))

    return a.tape.record((a,), out, bw)


def gather_rows(a, index, pattern=None):
    """``a[index]`` along the first axis; with ``pattern`` the result is an edge vector."""
    index = np.asarray(index, dtype=np.int64)
    data = a.data[index]
    out = _new(a.tape, data.reshape(-1) if pattern is not None else data, pattern=pattern)

    def bw(g):
        g = g.reshape(data.shape)
        if a.data.ndim == 1 or a.shape[1] == 1:
            flat = np.bincount(index, weights=g.reshape(-1), minlength=a.shape[0])
            a.accumulate(flat.reshape(a.shape))
        else:
            np.add.at(a.grad, index, g)

    return a.tape.record((a,), out, bw)


def embed_edges(ev, target, positions, base=None):
    """Scatter ``ev`` into ``target`` pattern at ``positions`` on top of constant ``base``."""
    positions = np.asarray(positions, dtype=np.int64)
    data = np.zeros(target.nnz) if base is None else np.array(base, dtype=np.float64)
    np.add.at(data, positions, ev.data)
    out = EdgeVector(ev.tape, data, target)

    def bw(g):
        ev.accumulate(g[positions])

    return ev.tape.record((ev,), out, bw)


def stack_columns(values):
    """Stack flat vectors of equal length into an ``n x k`` value."""
    tape = _tape_of(*values)
    out = Value(tape, np.column_stack([v.data.reshape(-1) for v in values]))

    def bw(g):
        for k, v in enumerate(values):
            if v.requires_grad:
                v.accumulate(g[:, k].reshape(v.shape))

    return tape.record(tuple(values), out, bw)


def _pair_dots(a, b, rows, cols, chunk=8192):
    """``out[e] = a[rows[e]] . b[cols[e]]``, gathered in cache-sized blocks."""
    out = np.empty(len(rows))
    for start in range(0, len(rows), chunk):
        stop = start + chunk
        out[start:stop] = np.einsum("ij,ij->i", a[rows[start:stop]], b[cols[start:stop]])
    return out


def _assemble(pattern, values):
    return sp.csr_matrix((values, pattern.indices, pattern.indptr), shape=pattern.shape)


def spmm_var(edge_weights, pattern, x):
    """Product of the sparse matrix ``(pattern, edge_weights)`` with dense ``x``."""
    tape = _tape_of(edge_weights, x)
    if edge_weights.data.shape != (pattern.nnz,):
        raise StructureError("edge weights do not match the pattern")
    if x.data.ndim != 2 or x.shape[0] != pattern.n_cols:
        raise StructureError(f"cannot propagate {x.shape} over a {pattern.shape} graph")
    a = _assemble(pattern, edge_weights.data)
    out = Value(tape, np.asarray(a @ x.data))
    rows, cols = pattern.row_ids, pattern.indices

    def bw(g):
        if edge_weights.requires_grad:
            edge_weights.accumulate(_pair_dots(g, x.data, rows, cols))
        if x.requires_grad:
            x.accumulate(np.asarray(a.T @ g))

    return tape.record((edge_weights, x), out, bw)


def spmm_const(a, x):
    """Product of a fixed :class:`CsrMatrix` with ``x``."""
    if x.shape[0] != a.n_cols:
        raise StructureError(f"cannot propagate {x.shape} over a {a.shape} graph")
    m = a.to_scipy()
    out = Value(x.tape, np.asarray(m @ x.data))

    def bw(g):
        if x.requires_grad:
            x.accumulate(np.asarray(m.T @ g))

    return x.tape.record((x,), out, bw)


def sym_normalize_var(edge_weights, pattern, eps=1e-12):
    """Differentiable ``D^{-1/2} G D^{-1/2}`` on stored entries."""
    w = edge_weights.data
    if np.any(w < 0):
        bad = int(np.flatnonzero(w < 0)[0])
        u, v = int(pattern.row_ids[bad]), int(pattern.indices[bad])
        raise ValueError(
            f"negative learned edge weight {w[bad]!r} at edge ({u}, {v}); "
            "apply a nonnegative output activation before normalizing"
        )
    rows, cols = pattern.row_ids, pattern.indices
    n = pattern.n_rows
    deg = np.bincount(rows, weights=w, minlength=n)
    floored = deg < eps
    s = 1.0 / np.sqrt(np.maximum(deg, eps))
    out = EdgeVector(edge_weights.tape, w * s[rows] * s[cols], pattern)

    def bw(g):
        q = g * out.data
        dsd = np.where(floored, 0.0, -0.5 / np.maximum(deg, eps))
        per_node = (
            np.bincount(rows, weights=q, minlength=n)
            + np.bincount(cols, weights=q, minlength=n)
        ) * dsd
        edge_weights.accumulate(g * s[rows] * s[cols] + per_node[rows])

    return edge_weights.tape.record((edge_weights,), out, bw)


def edge_dot(h, pattern):
    """Per stored edge ``(u, v)``: ``h[u] . h[v]``, never forming ``h h^T``."""
    rows, cols = pattern.row_ids, pattern.indices
    out = EdgeVector(h.tape, _pair_dots(h.data, h.data, rows, cols), pattern)

    def bw(g):
        m = _assemble(pattern, g)
        h.accumulate(np.asarray(m @ h.data) + np.asarray(m.T @ h.data))

    return h.tape.record((h,), out, bw)


# losses -----------------------------------------------------------------

def softmax_cross_entropy(logits, labels, mask):
    labels = np.asarray(labels, dtype=np.int64)
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if len(idx) == 0:
        raise ValueError("cross entropy needs at least one masked row")
    n_classes = logits.shape[1]
    if np.any(labels[idx] < 0) or np.any(labels[idx] >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    z = logits.data[idx]
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    nll = log_norm - shifted[np.arange(len(idx)), labels[idx]]
    out = Value(logits.tape, np.array(nll.mean()))

    def bw(g):
        probs = np.exp(shifted - log_norm[:, None])
        probs[np.arange(len(idx)), labels[idx]] -= 1.0
        logits.grad[idx] += g * probs / len(idx)

    return logits.tape.record((logits,), out, bw)


def l2_penalty(params, coeff):
    if coeff < 0:
        raise ValueError("l2 coefficient must be nonnegative")
    params = list(params)
    tape = _tape_of(*params)
    total = coeff * sum(float(np.sum(p.data * p.data)) for p in params)
    out = Value(tape, np.array(total))

    def bw(g):
        for p in params:
            if p.requires_grad:
                p.accumulate(2.0 * coeff * g * p.data)

    return tape.record(tuple(params), out, bw)
