import numpy as np
import pytest

from pdnet import autodiff as ad
from pdnet.sparse import CsrMatrix

GRAD_RTOL = 1e-4
GRAD_ATOL = 1e-7


def project(value, weights):
    """Scalar ``sum(value * weights)`` recorded on the value's tape."""
    weights = np.asarray(weights, dtype=np.float64)
    out = ad.Value(value.tape, np.array([[np.sum(value.data * weights)]]))

    def bw(g):
        value.accumulate(g.reshape(()) * weights)

    return value.tape.record((value,), out, bw)


def numeric_gradient(f, x, h=1e-6):
    """Central differences of scalar ``f`` w.r.t. every entry of array ``x`` (in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def max_rel_error(analytic, numeric, atol=GRAD_ATOL):
    """Largest relative error over entries whose absolute error exceeds ``atol``."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(diff <= atol, 0.0, diff / np.where(scale > 0, scale, 1.0))
    return float(rel.max()) if rel.size else 0.0


def check_gradients(build, params, h=1e-6):
    """Compare tape gradients of ``build(tape, leaves) -> scalar`` with finite differences.

    Returns the worst relative error over all parameters.
    """
    tape = ad.Tape()
    leaves = {k: tape.leaf(v) for k, v in params.items()}
    loss = build(tape, leaves)
    ad.backward(tape, loss)
    worst = 0.0
    for name, arr in params.items():
        def f():
            t = ad.Tape()
            return float(build(t, {k: t.leaf(v) for k, v in params.items()}).data.reshape(()))

        num = numeric_gradient(f, arr, h)
        worst = max(worst, max_rel_error(leaves[name].grad, num))
    return worst


def random_graph(rng, n, p, weighted=False):
    u, v = np.triu_indices(n, k=1)
    keep = rng.random(len(u)) < p
    edges = np.column_stack([u[keep], v[keep]])
    weights = rng.uniform(0.5, 2.0, size=len(edges)) if weighted else None
    return CsrMatrix.from_edges(n, edges, weights)


def path_graph(n):
    return CsrMatrix.from_edges(n, [(i, i + 1) for i in range(n - 1)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
