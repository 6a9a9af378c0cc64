"""Graph dataset container and its on-disk format.

File format (JSON, UTF-8, ``format = "pdnet-dataset"``, ``version = 1``)::

    {
      "format": "pdnet-dataset", "version": 1,
      "n_nodes": int, "n_classes": int, "n_edge_features": int,
      "meta": {...generator config...},
      "edges": [[u, v, intra], ...],        # one row per undirected edge, u < v
      "labels": [int, ...],
      "node_features": [[float, ...], ...],
      "edge_features": [[float, ...], ...]  # aligned with "edges"
    }

``intra`` is 1 for intra-class edges, 0 for inter-class and -1 when unknown.
Floats are written with Python's shortest round-trip repr, so loading a file
reproduces every value bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sparse import CsrMatrix

FORMAT = "pdnet-dataset"
VERSION = 1


def undirected_edges(graph):
    """``(m, 2)`` array of stored pairs with ``u < v`` in storage order."""
    rows, cols = graph.row_ids, graph.indices
    upper = rows < cols
    return np.column_stack([rows[upper], cols[upper]])


def edge_index_map(graph, edges):
    """For every stored position of ``graph``, the row of ``edges`` it belongs to."""
    rows, cols = graph.row_ids, graph.indices
    lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
    n = graph.n_rows
    edges = np.sort(np.asarray(edges, dtype=np.int64).reshape(-1, 2), axis=1)
    keys = edges[:, 0] * n + edges[:, 1]
    order = np.argsort(keys, kind="stable")
    query = lo * n + hi
    pos = np.searchsorted(keys[order], query)
    pos = np.minimum(pos, max(len(keys) - 1, 0))
    found = order[pos] if len(keys) else np.zeros(0, dtype=np.int64)
    if len(query) and not np.array_equal(keys[found], query):
        raise ValueError("graph contains a stored entry with no matching edge row")
    return found


@dataclass
class GraphDataset:
    """A node-classification dataset over one simple undirected graph."""

    graph: CsrMatrix
    node_features: np.ndarray
    labels: np.ndarray
    edge_features: np.ndarray | None = None
    edge_class_mask: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        m = len(self.edges)
        if self.edge_features is None:
            self.edge_features = np.zeros((m, 0))
        ef = np.asarray(self.edge_features, dtype=np.float64)
        if ef.ndim != 2:
            ef = ef.reshape(m, -1) if m else ef.reshape(0, 0)
        if ef.shape[0] != m:
            raise ValueError(f"edge features have {ef.shape[0]} rows for {m} edges")
        self.edge_features = ef
        if self.edge_class_mask is not None:
            self.edge_class_mask = np.asarray(self.edge_class_mask, dtype=bool)
        if self.node_features.shape[0] != self.n_nodes or len(self.labels) != self.n_nodes:
            raise ValueError("node features and labels must have one row per node")

    @property
    def n_nodes(self):
        return self.graph.n_rows

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    @property
    def edges(self):
        return undirected_edges(self.graph)

    @property
    def edge_map(self):
        return edge_index_map(self.graph, self.edges)

    def summary(self):
        m = len(self.edges)
        out = {"nodes": self.n_nodes, "edges": m, "classes": self.n_classes}
        if self.edge_class_mask is not None:
            intra = int(self.edge_class_mask.sum())
            out.update(intra=intra, inter=m - intra)
        return out

    # io ------------------------------------------------------------------

    def to_json(self):
        edges = self.edges
        if self.edge_class_mask is None:
            flags = [-1] * len(edges)
        else:
            flags = self.edge_class_mask.astype(int).tolist()
        doc = {
            "format": FORMAT,
            "version": VERSION,
            "n_nodes": self.n_nodes,
            "n_classes": self.n_classes,
            "n_edge_features": int(self.edge_features.shape[1]),
            "meta": self.meta,
            "edges": [[int(u), int(v), f] for (u, v), f in zip(edges, flags)],
            "labels": self.labels.tolist(),
            "node_features": self.node_features.tolist(),
            "edge_features": self.edge_features.tolist(),
        }
        return json.dumps(doc, separators=(",", ":"))

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("format") != FORMAT:
            raise ValueError(f"not a {FORMAT} file")
        if doc.get("version") != VERSION:
            raise ValueError(f"unsupported dataset version {doc.get('version')!r}")
        n = int(doc["n_nodes"])
        rows = np.asarray(doc["edges"], dtype=np.int64).reshape(-1, 3)
        graph = CsrMatrix.from_edges(n, rows[:, :2])
        # storage order of the rebuilt graph may differ from file order
        perm = edge_index_map(graph, rows[:, :2])[graph.row_ids < graph.indices]
        n_edge_features = int(doc.get("n_edge_features", 0))
        edge_features = np.asarray(doc["edge_features"], dtype=np.float64)
        edge_features = edge_features.reshape(len(rows), n_edge_features if not len(rows) else -1)
        flags = rows[:, 2]
        mask = None if np.any(flags < 0) else flags.astype(bool)[perm]
        return cls(
            graph=graph,
            node_features=np.asarray(doc["node_features"], dtype=np.float64).reshape(n, -1),
            labels=np.asarray(doc["labels"], dtype=np.int64),
            edge_features=edge_features[perm],
            edge_class_mask=mask,
            meta=doc.get("meta", {}),
        )

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text(encoding="utf-8"))
