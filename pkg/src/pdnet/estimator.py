"""scikit-learn compatible front end.

:class:`PathfinderClassifier` is a transductive/inductive node classifier.
The graph is passed to :meth:`~PathfinderClassifier.fit` next to the node
feature matrix; unlabeled nodes carry the label ``-1`` as in
:mod:`sklearn.semi_supervised`. :class:`TieStrengthFeatures` turns a graph
into the per-edge similarity features the PDN consumes.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import autodiff as ad
from .dataset import edge_index_map, undirected_edges
from .features import METRICS, feature_matrix
from .models import ModelInputs, build_model
from .sparse import CsrMatrix, binarize
from .training import TrainConfig, predict_logits, train


def check_graph(graph, n_nodes=None):
    """Validate an adjacency (scipy sparse, dense array or CsrMatrix) as a symmetric CsrMatrix."""
    if isinstance(graph, CsrMatrix):
        csr = graph
    elif sp.issparse(graph):
        csr = CsrMatrix.from_scipy(graph)
    else:
        csr = CsrMatrix.from_dense(check_array(graph, ensure_all_finite=True))
    if csr.n_rows != csr.n_cols:
        raise ValueError(f"adjacency must be square, got {csr.shape}")
    if n_nodes is not None and csr.n_rows != n_nodes:
        raise ValueError(f"adjacency has {csr.n_rows} nodes but X has {n_nodes} rows")
    if np.any(csr.row_ids == csr.indices):
        raise ValueError("adjacency must not contain self loops")
    if not csr.pattern.with_values(np.ones(csr.nnz)).is_symmetric():
        raise ValueError("adjacency must be undirected (symmetric support)")
    return csr


def check_edge_features(edge_features, graph):
    """Edge features as one row per undirected edge (``u < v``, storage order).

    Also accepts one row per stored entry, in which case the upper-triangle
    rows are kept.
    """
    m = len(undirected_edges(graph))
    if edge_features is None:
        return np.zeros((m, 0))
    ef = check_array(edge_features, ensure_min_samples=0)
    if ef.shape[0] == m:
        return ef
    if ef.shape[0] == graph.nnz:
        return ef[graph.row_ids < graph.indices]
    raise ValueError(
        f"expected {m} (per edge) or {graph.nnz} (per stored entry) feature rows, "
        f"got {ef.shape[0]}"
    )


def _inputs(x, graph, edge_features):
    graph = check_graph(graph, x.shape[0])
    ef = check_edge_features(edge_features, graph)
    edges = undirected_edges(graph)
    return ModelInputs(binarize(graph), x, ef, edge_index_map(graph, edges))


class PathfinderClassifier(ClassifierMixin, BaseEstimator):
    """Node classifier that learns its message-passing graph jointly with a GCN.

    Parameters
    ----------
    model : {"pdn", "gcn", "pdn_attention", "pdn_edgeconv", "pdn_multiscale"}
        Pathfinder variant; ``"gcn"`` uses the input graph with unit weights.
    hidden : int
        Width of the GCN hidden layer.
    pathfinder_hidden : tuple of int
        Hidden layer widths of the per-edge MLP (``"pdn"`` only).
    output_activation : str
        Activation producing each learned edge weight (``"pdn"`` only).
    n_hops : int
        Number of adjacency powers mixed by ``"pdn_multiscale"``.
    hops : tuple of int
        Adjacency powers used as edge-convolution layers.
    self_loops : bool
        Add unit self loops to the learned graph before normalization.
    lr, epochs, dropout, l2 :
        Optimizer settings.
    random_state : int
        Seed for initialization and dropout.
    """

    def __init__(self, model="pdn", hidden=32, pathfinder_hidden=(16,),
                 output_activation="sigmoid", n_hops=2, hops=(1, 2), self_loops=True,
                 lr=1e-2, epochs=200, dropout=0.5, l2=1e-3, random_state=0):
        self.model = model
        self.hidden = hidden
        self.pathfinder_hidden = pathfinder_hidden
        self.output_activation = output_activation
        self.n_hops = n_hops
        self.hops = hops
        self.self_loops = self_loops
        self.lr = lr
        self.epochs = epochs
        self.dropout = dropout
        self.l2 = l2
        self.random_state = random_state

    def _build(self, n_features, n_classes, n_edge_features):
        common = dict(n_features=n_features, n_classes=n_classes, hidden=self.hidden,
                      dropout=self.dropout, self_loops=self.self_loops)
        extra = {
            "gcn": {},
            "pdn": dict(n_edge_features=n_edge_features,
                        pathfinder_hidden=tuple(self.pathfinder_hidden),
                        output_activation=self.output_activation),
            "pdn_attention": dict(n_edge_features=n_edge_features),
            "pdn_edgeconv": dict(hops=tuple(self.hops)),
            "pdn_multiscale": dict(n_hops=self.n_hops),
        }
        if self.model not in extra:
            raise ValueError(f"unknown model {self.model!r}")
        return build_model(self.model, **common, **extra[self.model])

    def fit(self, X, y, *, graph, edge_features=None):
        """Fit on all nodes of ``graph``; rows of ``y`` equal to -1 are unlabeled."""
        X = check_array(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError("y must have one entry per node")
        labeled = y != -1
        if not labeled.any():
            raise ValueError("at least one node must be labeled")
        self.classes_, encoded = np.unique(y[labeled], return_inverse=True)
        labels = np.full(len(y), 0, dtype=np.int64)
        labels[labeled] = encoded
        inputs = _inputs(X, graph, edge_features)
        self.model_ = self._build(X.shape[1], len(self.classes_), inputs.edge_features.shape[1])
        config = TrainConfig(lr=self.lr, epochs=self.epochs, dropout=self.dropout,
                             l2=self.l2, seed=self.random_state)
        self.history_ = train(self.model_, inputs, labels, (labeled, ~labeled), config,
                              evaluate=False)
        self.params_ = self.history_.params
        self.n_features_in_ = X.shape[1]
        self._fit_inputs = inputs
        return self

    def decision_function(self, X, *, graph=None, edge_features=None):
        """Raw logits; without ``graph`` the fitted graph is reused."""
        check_is_fitted(self, "params_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        if graph is None:
            if X.shape[0] != self._fit_inputs.graph.n_rows:
                raise ValueError("pass graph= when predicting on a different node set")
            inputs = ModelInputs(self._fit_inputs.graph, X, self._fit_inputs.edge_features,
                                 self._fit_inputs.edge_map)
        else:
            inputs = _inputs(X, graph, edge_features)
        return predict_logits(self.model_, inputs, self.params_)

    def predict_proba(self, X, *, graph=None, edge_features=None):
        z = self.decision_function(X, graph=graph, edge_features=edge_features)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X, *, graph=None, edge_features=None):
        z = self.decision_function(X, graph=graph, edge_features=edge_features)
        return self.classes_[np.argmax(z, axis=1)]

    def learned_graph(self, X=None, *, graph=None, edge_features=None):
        """The learned edge weights on the fitted (or given) graph as a scipy matrix."""
        check_is_fitted(self, "params_")
        if not hasattr(self.model_, "edge_weights"):
            raise AttributeError(f"model {self.model!r} has no per-edge weight function")
        inputs = self._fit_inputs if graph is None else _inputs(X, graph, edge_features)
        tape = ad.Tape()
        leaves = {k: tape.leaf(v) for k, v in self.params_.items()}
        per_edge = self.model_.edge_weights(tape, leaves, inputs).data.ravel()
        return inputs.graph.pattern.with_values(per_edge[inputs.edge_map]).to_scipy()


class TieStrengthFeatures(TransformerMixin, BaseEstimator):
    """Per-edge neighbourhood similarity features of an undirected graph.

    ``transform(graph)`` returns one row per undirected edge ``u < v`` in
    storage order and one column per name in :data:`pdnet.features.METRICS`.
    ``scaling`` is ``"standard"`` (fit-time mean/std), ``"max"`` (fit-time
    column maximum, keeps features nonnegative) or ``None``.
    """

    def __init__(self, scaling="standard"):
        self.scaling = scaling

    def _raw(self, graph):
        return feature_matrix(binarize(check_graph(graph))).values

    def fit(self, X, y=None):
        raw = self._raw(X)
        if self.scaling == "standard":
            self.center_ = raw.mean(axis=0)
            std = raw.std(axis=0)
            self.scale_ = np.where(std > 0, std, 1.0)
        elif self.scaling == "max":
            self.center_ = np.zeros(raw.shape[1])
            peak = raw.max(axis=0)
            self.scale_ = np.where(peak > 0, peak, 1.0)
        elif self.scaling is None:
            self.center_ = np.zeros(raw.shape[1])
            self.scale_ = np.ones(raw.shape[1])
        else:
            raise ValueError(f"unknown scaling {self.scaling!r}")
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        return (self._raw(X) - self.center_) / self.scale_

    def get_feature_names_out(self, input_features=None):
        return np.asarray(METRICS, dtype=object)
