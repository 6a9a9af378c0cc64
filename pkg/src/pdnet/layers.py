"""Pathfinder building blocks: learned graphs from multiplex inputs.

Every learned graph is an :class:`~pdnet.autodiff.EdgeVector`, i.e. values on
the stored positions of a support pattern only. Activations are therefore
applied to stored entries and never to structural zeros.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .sparse import (
    CsrMatrix,
    StructureError,
    stack_on_support,
    support_union,
)


def glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# pathfinder neurons ------------------------------------------------------

@dataclass
class PathfinderNeuron:
    """One learned graph as ``act(sum_i beta_i * A_i)``; no bias term."""

    betas: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64).reshape(-1)


def pathfinder_layer(stacked, betas, activation, pattern):
    """Differentiable pathfinder layer.

    ``stacked`` is an ``nnz x p`` value holding the ``p`` input graphs on a
    shared pattern; ``betas`` is a list of ``p x 1`` values, one per neuron.
    """
    act = ad.activation(activation)
    return [act(ad.to_edges(ad.matmul(stacked, b), pattern)) for b in betas]


def pathfinder_layer_forward(adjs, neurons, tape=None):
    if not neurons:
        raise ValueError("a pathfinder layer needs at least one neuron")
    tape = tape or ad.Tape()
    shape = adjs[0].shape
    if any(a.shape != shape for a in adjs):
        raise StructureError("all input graphs must share one shape")
    pattern = support_union(adjs)
    stacked = tape.constant(stack_on_support(pattern, adjs))
    out = []
    for neuron in neurons:
        if len(neuron.betas) != len(adjs):
            raise StructureError(
                f"neuron has {len(neuron.betas)} weights for {len(adjs)} input graphs"
            )
        beta = tape.leaf(neuron.betas.reshape(-1, 1))
        out.extend(pathfinder_layer(stacked, [beta], neuron.activation, pattern))
    return out


def pathfinder_neuron_forward(adjs, neuron, tape=None):
    return pathfinder_layer_forward(adjs, [neuron], tape)[0]


def stack_graphs(graphs):
    """Stack learned edge vectors that share one pattern into an ``nnz x q`` value."""
    pattern = graphs[0].pattern
    if any(g.pattern is not pattern and g.pattern != pattern for g in graphs):
        raise StructureError("learned graphs must share one support pattern")
    return ad.stack_columns(graphs)


# per-edge MLP ------------------------------------------------------------

@dataclass
class PathfinderMlp:
    """Per-edge feed-forward aggregator turning ``D`` edge features into one weight.

    ``hidden=()`` gives a generalized linear model. Biases are allowed here;
    since the MLP only ever sees stored edges the output stays sparse.
    """

    n_inputs: int
    hidden: tuple = (16,)
    output_activation: str = "sigmoid"
    hidden_activation: str = "relu"

    def init_params(self, rng, prefix="pf"):
        params = {}
        sizes = [self.n_inputs, *self.hidden, 1]
        for k, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            params[f"{prefix}_w{k}"] = glorot(rng, fi, fo)
            params[f"{prefix}_b{k}"] = np.zeros((1, fo))
        return params

    def forward(self, features, params, prefix="pf"):
        """``features`` is an ``m x D`` value; returns an ``m x 1`` value."""
        if features.shape[1] != self.n_inputs:
            raise StructureError(
                f"expected {self.n_inputs} edge features, got {features.shape[1]}"
            )
        h = features
        n_layers = len(self.hidden) + 1
        for k in range(n_layers):
            h = ad.add_bias(ad.matmul(h, params[f"{prefix}_w{k}"]), params[f"{prefix}_b{k}"])
            name = self.hidden_activation if k < n_layers - 1 else self.output_activation
            h = ad.activation(name)(h)
        return h


def pathfinder_mlp_forward(edge_features, mlp, params, pattern=None, tape=None):
    """Evaluate ``mlp`` on a plain ``m x D`` array with numpy ``params``."""
    tape = tape or ad.Tape()
    pv = {k: tape.leaf(v) for k, v in params.items()}
    out = mlp.forward(tape.constant(edge_features), pv)
    if pattern is not None:
        return ad.to_edges(out, pattern)
    return out


def xor_reference_weights():
    """Two-neuron module whose edge weight is the XOR of two binary layers.

    Hidden units are ``relu(a + b)`` and ``relu(a + b - 1)``; the output is
    ``h1 - 2 * h2`` with identity activation.
    """
    mlp = PathfinderMlp(n_inputs=2, hidden=(2,), output_activation="identity")
    params = {
        "pf_w0": np.array([[1.0, 1.0], [1.0, 1.0]]),
        "pf_b0": np.array([[0.0, -1.0]]),
        "pf_w1": np.array([[1.0], [-2.0]]),
        "pf_b1": np.array([[0.0]]),
    }
    return mlp, params


def xor_truth_table():
    """Rows of ``(a, b, h1, h2, weight)`` from the reference module."""
    mlp, params = xor_reference_weights()
    inputs = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    hidden = np.maximum(inputs @ params["pf_w0"] + params["pf_b0"], 0.0)
    weight = pathfinder_mlp_forward(inputs, mlp, params).data[:, 0]
    return [
        (int(a), int(b), float(h1), float(h2), float(w))
        for (a, b), (h1, h2), w in zip(inputs, hidden, weight)
    ]


# graph propagation ---------------------------------------------------------

@dataclass
class SelfLoopPlan:
    """Precomputed scatter of a learned graph onto its pattern plus the diagonal."""

    source: object
    target: object
    positions: np.ndarray
    base: np.ndarray

    @classmethod
    def build(cls, pattern, weight=1.0):
        n = pattern.n_rows
        diag = CsrMatrix.identity(n)
        target = support_union([pattern.with_values(np.ones(pattern.nnz)), diag])
        positions = target.find(pattern.row_ids, pattern.indices)
        base = np.zeros(target.nnz)
        base[target.find(np.arange(n), np.arange(n))] = weight
        return cls(pattern, target, positions, base)

    def apply(self, ev):
        return ad.embed_edges(ev, self.target, self.positions, self.base)


def normalized_propagator(learned, self_loops=None, eps=1e-12):
    """Return ``h -> N h`` for the normalized learned graph ``N``."""
    if self_loops is not None:
        learned = self_loops.apply(learned)
    norm = ad.sym_normalize_var(learned, learned.pattern, eps)
    return lambda h: ad.spmm_var(norm, norm.pattern, h)


def gcn_head(propagate, x, w1, w2, dropout=0.0, train=False, rng=None):
    """Two-hop spectral GCN ``N relu(N drop(X) W1) W2`` with raw logits."""
    h = ad.dropout(x, dropout, train, rng)
    h = ad.relu(propagate(ad.matmul(h, w1)))
    h = ad.dropout(h, dropout, train, rng)
    return propagate(ad.matmul(h, w2))


def gcn_forward(learned, x, w1, w2, dropout=0.0, train=False, rng=None,
                self_loops=True, eps=1e-12):
    """GCN over a learned graph (an edge vector) with optional unit self loops."""
    plan = SelfLoopPlan.build(learned.pattern) if self_loops else None
    return gcn_head(normalized_propagator(learned, plan, eps), x, w1, w2, dropout, train, rng)


# edge convolution ----------------------------------------------------------

def edgeconv_scores(adj, x, w, b, node_activation="relu", score_activation="sigmoid"):
    """Learned scores on the stored edges of a binary ``adj``.

    Node embeddings ``H = act(X W + b)``; each edge ``(u, v)`` gets
    ``score_act(H[u] . H[v])``. Work is proportional to the edge count.
    """
    if adj.nnz and not np.all(adj.values == 1.0):
        raise ValueError("edge convolution needs a binary adjacency matrix")
    h = ad.activation(node_activation)(ad.add_bias(ad.matmul(x, w), b))
    return ad.activation(score_activation)(ad.edge_dot(h, adj.pattern))


def union_plan(patterns):
    """Union of ``patterns`` and the position of each pattern's entries inside it."""
    union = support_union([p.with_values(np.ones(p.nnz)) for p in patterns])
    return union, [union.find(p.row_ids, p.indices) for p in patterns]


def edgeconv_combine(graphs, betas, activation="relu", plan=None):
    """``act(sum_i beta_i G_i)`` on the union of the learned supports.

    ``betas`` is a ``k x 1`` value; ``plan`` is an optional cached
    :func:`union_plan` of the graphs' patterns.
    """
    union, positions = plan or union_plan([g.pattern for g in graphs])
    embedded = [ad.embed_edges(g, union, pos) for g, pos in zip(graphs, positions)]
    mixed = ad.to_edges(ad.matmul(ad.stack_columns(embedded), betas), union)
    return ad.activation(activation)(mixed)


# multi-scale mixing ---------------------------------------------------------

@dataclass
class MultiScaleMixer:
    logits: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def weights(self):
        z = np.exp(self.logits - self.logits.max())
        return z / z.sum()


def multiscale_propagate(norm_adj, h, weights, n_hops):
    """``sum_i P_i A^i h`` by repeated sparse products; powers are never formed.

    ``weights`` is a value holding the ``n_hops`` mixing weights.
    """
    if n_hops < 1:
        raise ValueError("multi-scale mixing needs at least one hop")
    out = None
    for i in range(n_hops):
        h = ad.spmm_const(norm_adj, h)
        term = ad.mul(h, ad.take(weights, i))
        out = term if out is None else ad.add(out, term)
    return out


def multiscale_forward(norm_adj, x, logits, w, n_hops):
    """``(sum_i softmax(logits)_i A^i) X W`` for a normalized adjacency ``A``."""
    if n_hops < 1:
        raise ValueError("multi-scale mixing needs at least one hop")
    if logits.data.size != n_hops:
        raise StructureError(f"need {n_hops} mixing logits, got {logits.data.size}")
    p = ad.softmax_vector(logits)
    return multiscale_propagate(norm_adj, ad.matmul(x, w), p, n_hops), p


# linear attention and degree limits --------------------------------------------

def linear_pdn_attention(edge_features, logits):
    """Edge weight as a softmax-weighted mix of the edge's features.

    Returns ``(weights, attention)``: an ``m x 1`` value and the ``D x 1``
    attention value.
    """
    attention = ad.softmax_vector(logits)
    return ad.matmul(edge_features, attention), attention


def pdn_edge_weight_linear(features, betas):
    features = np.asarray(features, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    if features.shape != betas.shape:
        raise ValueError("features and betas must have the same length")
    return float(features @ betas)


def softmax_neighbor_weight(scores, target):
    """Softmax weight of neighbour ``target`` among ``scores`` of one node's neighbourhood."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("empty neighbourhood")
    if not 0 <= target < scores.size:
        raise IndexError(f"neighbour index {target} out of range")
    z = np.exp(scores - scores.max())
    return float(z[target] / z.sum())
