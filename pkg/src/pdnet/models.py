"""Trainable node classifiers: a fixed-graph GCN and the pathfinder variants.

A model is a small description object. It creates numpy parameters with
:meth:`init_params`, precomputes data-dependent constants with
:meth:`prepare`, and records a forward pass on a tape with :meth:`forward`.
Parameters live outside the model so optimizers and checkpoints can treat
them as a flat ``{name: array}`` dict.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .layers import (
    PathfinderMlp,
    SelfLoopPlan,
    edgeconv_combine,
    edgeconv_scores,
    gcn_head,
    glorot,
    linear_pdn_attention,
    multiscale_propagate,
    normalized_propagator,
    union_plan,
)
from .sparse import (
    add_self_loops,
    binarize,
    matrix_power_support,
    sym_normalize,
)

CHECKPOINT_FORMAT = "pdnet-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelInputs:
    """Everything a forward pass needs from a dataset, already aligned."""

    graph: object
    node_features: np.ndarray
    edge_features: np.ndarray
    edge_map: np.ndarray

    @classmethod
    def from_dataset(cls, ds):
        return cls(binarize(ds.graph), ds.node_features, ds.edge_features, ds.edge_map)


@dataclass
class GcnHeadMixin:
    n_features: int
    n_classes: int
    hidden: int = 32
    dropout: float = 0.5
    self_loops: bool = True

    def _head_params(self, rng):
        return {
            "gcn_w1": glorot(rng, self.n_features, self.hidden),
            "gcn_w2": glorot(rng, self.hidden, self.n_classes),
        }

    def _head(self, propagate, tape, params, inputs, train, rng):
        x = tape.constant(inputs.node_features)
        return gcn_head(propagate, x, params["gcn_w1"], params["gcn_w2"],
                        self.dropout, train, rng)

    def config(self):
        return {"kind": self.kind, **asdict(self)}


@dataclass
class GcnModel(GcnHeadMixin):
    """Baseline: the same GCN head over the input graph with unit edge weights."""

    kind = "gcn"

    def init_params(self, rng):
        return self._head_params(rng)

    def prepare(self, inputs):
        g = add_self_loops(inputs.graph) if self.self_loops else inputs.graph
        return {"norm": sym_normalize(g)}

    def forward(self, tape, params, inputs, cache, train=False, rng=None):
        norm = cache["norm"]
        logits = self._head(lambda h: ad.spmm_const(norm, h), tape, params, inputs, train, rng)
        return logits, {}


class _LearnedGraphMixin:
    def _prepare_loops(self, inputs):
        pattern = inputs.graph.pattern
        return {
            "pattern": pattern,
            "loops": SelfLoopPlan.build(pattern) if self.self_loops else None,
        }

    def _propagate_learned(self, per_edge, cache):
        """Map an ``m x 1`` per-undirected-edge value onto both stored directions."""
        ev = ad.gather_rows(per_edge, cache["edge_map"], pattern=cache["pattern"])
        return normalized_propagator(ev, cache["loops"])


@dataclass
class PdnModel(_LearnedGraphMixin, GcnHeadMixin):
    """Per-edge MLP over edge features feeding the GCN head."""

    n_edge_features: int = 1
    pathfinder_hidden: tuple = (16,)
    output_activation: str = "sigmoid"

    kind = "pdn"

    def __post_init__(self):
        self.pathfinder_hidden = tuple(int(h) for h in self.pathfinder_hidden)

    @property
    def mlp(self):
        return PathfinderMlp(self.n_edge_features, self.pathfinder_hidden, self.output_activation)

    def init_params(self, rng):
        return {**self.mlp.init_params(rng), **self._head_params(rng)}

    def prepare(self, inputs):
        if inputs.edge_features.shape[1] != self.n_edge_features:
            raise ValueError(
                f"model expects {self.n_edge_features} edge features, "
                f"data has {inputs.edge_features.shape[1]}"
            )
        return {**self._prepare_loops(inputs), "edge_map": inputs.edge_map}

    def edge_weights(self, tape, params, inputs):
        return self.mlp.forward(tape.constant(inputs.edge_features), params)

    def forward(self, tape, params, inputs, cache, train=False, rng=None):
        weights = self.edge_weights(tape, params, inputs)
        prop = self._propagate_learned(weights, cache)
        return self._head(prop, tape, params, inputs, train, rng), {}


@dataclass
class LinearAttentionPdn(_LearnedGraphMixin, GcnHeadMixin):
    """Edge weight = softmax(logits) . edge features; the softmax is the attention."""

    n_edge_features: int = 1
    feature_names: tuple = ()

    kind = "pdn_attention"

    def __post_init__(self):
        self.feature_names = tuple(self.feature_names)

    def init_params(self, rng):
        return {"att_logits": np.zeros((self.n_edge_features, 1)), **self._head_params(rng)}

    def prepare(self, inputs):
        if np.any(inputs.edge_features < 0):
            raise ValueError("attention PDN needs nonnegative edge features")
        return {**self._prepare_loops(inputs), "edge_map": inputs.edge_map}

    def forward(self, tape, params, inputs, cache, train=False, rng=None):
        weights, attention = linear_pdn_attention(
            tape.constant(inputs.edge_features), params["att_logits"]
        )
        prop = self._propagate_learned(weights, cache)
        logits = self._head(prop, tape, params, inputs, train, rng)
        return logits, {"attention": attention.data.ravel().copy()}


@dataclass
class EdgeConvPdn(GcnHeadMixin):
    """Learned scores on each hop's binary adjacency, mixed by a pathfinder neuron."""

    hops: tuple = (1, 2)
    embed_dim: int = 16
    node_activation: str = "relu"
    score_activation: str = "sigmoid"
    combine_activation: str = "relu"

    kind = "pdn_edgeconv"

    def __post_init__(self):
        self.hops = tuple(int(h) for h in self.hops)

    def init_params(self, rng):
        params = {}
        for i in range(len(self.hops)):
            params[f"ec_w{i}"] = glorot(rng, self.n_features, self.embed_dim)
            params[f"ec_b{i}"] = np.zeros((1, self.embed_dim))
        # positive start keeps the ReLU combination alive
        params["ec_beta"] = np.full((len(self.hops), 1), 1.0 / len(self.hops))
        params.update(self._head_params(rng))
        return params

    def prepare(self, inputs):
        layers = [
            inputs.graph if h == 1 else matrix_power_support(inputs.graph, h)
            for h in self.hops
        ]
        union, positions = union_plan([a.pattern for a in layers])
        return {
            "layers": layers,
            "union": (union, positions),
            "loops": SelfLoopPlan.build(union) if self.self_loops else None,
        }

    def forward(self, tape, params, inputs, cache, train=False, rng=None):
        x = tape.constant(inputs.node_features)
        scores = [
            edgeconv_scores(a, x, params[f"ec_w{i}"], params[f"ec_b{i}"],
                            self.node_activation, self.score_activation)
            for i, a in enumerate(cache["layers"])
        ]
        learned = edgeconv_combine(scores, params["ec_beta"], self.combine_activation,
                                   plan=cache["union"])
        prop = normalized_propagator(learned, cache["loops"])
        return self._head(prop, tape, params, inputs, train, rng), {}


@dataclass
class MultiScalePdn(GcnHeadMixin):
    """GCN whose propagation matrix is a softmax mix of normalized adjacency powers."""

    n_hops: int = 2

    kind = "pdn_multiscale"

    def init_params(self, rng):
        return {"ms_logits": np.zeros((self.n_hops, 1)), **self._head_params(rng)}

    def prepare(self, inputs):
        g = add_self_loops(inputs.graph) if self.self_loops else inputs.graph
        return {"norm": sym_normalize(g)}

    def forward(self, tape, params, inputs, cache, train=False, rng=None):
        weights = ad.softmax_vector(params["ms_logits"])
        norm = cache["norm"]
        prop = lambda h: multiscale_propagate(norm, h, weights, self.n_hops)  # noqa: E731
        logits = self._head(prop, tape, params, inputs, train, rng)
        return logits, {"attention": weights.data.ravel().copy()}


MODEL_KINDS = {
    cls.kind: cls
    for cls in (GcnModel, PdnModel, LinearAttentionPdn, EdgeConvPdn, MultiScalePdn)
}


def build_model(kind, **kwargs):
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown model {kind!r}; choose from {sorted(MODEL_KINDS)}") from None
    return cls(**kwargs)


# checkpoints ------------------------------------------------------------------

def checkpoint_json(model, params):
    """Serialize architecture config plus flat parameter arrays.

    Keys: ``format``, ``version``, ``model`` (config incl. ``kind``) and
    ``params`` mapping each name to ``{"shape": [...], "values": [...]}``
    with values in row-major order.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": _jsonable(model.config()),
        "params": {
            name: {"shape": list(arr.shape), "values": arr.ravel().tolist()}
            for name, arr in sorted(params.items())
        },
    }
    return json.dumps(doc, indent=1)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def save_checkpoint(path, model, params):
    Path(path).write_text(checkpoint_json(model, params) + "\n", encoding="utf-8")


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a pdnet checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    config = dict(doc["model"])
    model = build_model(config.pop("kind"), **config)
    params = {
        name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }
    return model, params
