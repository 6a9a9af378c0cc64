"""Neighbourhood-similarity (tie strength) features for the edges of a simple graph."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .dataset import undirected_edges
from .sparse import CsrMatrix

METRICS = (
    "common_neighbors",
    "jaccard",
    "salton_cosine",
    "sorensen",
    "hub_promoted",
    "hub_depressed",
    "association_strength",
    "degree_product",
    "adamic_adar",
    "resource_allocation",
)


def _ratio(num, den):
    return num / den if den > 0 else 0.0


def _neighbours(graph, u):
    return set(graph.indices[graph.indptr[u]:graph.indptr[u + 1]].tolist())


def similarity(metric, graph, u, v):
    """Score of one node pair from the neighbourhoods ``N(u)`` and ``N(v)``."""
    if u == v:
        raise ValueError("similarity is defined for distinct nodes")
    nu, nv = _neighbours(graph, u), _neighbours(graph, v)
    du, dv = len(nu), len(nv)
    common = nu & nv
    cn = len(common)
    if metric == "common_neighbors":
        return float(cn)
    if metric == "jaccard":
        return _ratio(cn, len(nu | nv))
    if metric == "salton_cosine":
        return _ratio(cn, math.sqrt(du * dv))
    if metric == "sorensen":
        return _ratio(2 * cn, du + dv)
    if metric == "hub_promoted":
        return _ratio(cn, min(du, dv))
    if metric == "hub_depressed":
        return _ratio(cn, max(du, dv))
    if metric == "association_strength":
        return _ratio(cn, du * dv)
    if metric == "degree_product":
        return float(du * dv)
    if metric == "adamic_adar":
        return sum(
            1.0 / math.log(len(_neighbours(graph, w)))
            for w in sorted(common) if len(_neighbours(graph, w)) > 1
        )
    if metric == "resource_allocation":
        return sum(1.0 / len(_neighbours(graph, w)) for w in sorted(common))
    raise ValueError(f"unknown metric {metric!r}")


def check_simple_graph(graph):
    if graph.n_rows != graph.n_cols:
        raise ValueError("graph must be square")
    if np.any(graph.row_ids == graph.indices):
        raise ValueError("graph must not contain self loops")
    if graph.nnz and not np.all(graph.values == 1.0):
        raise ValueError("graph must be binary (no multi-edges or weights)")
    if not graph.is_symmetric():
        raise ValueError("graph must be undirected (symmetric)")


@dataclass
class EdgeFeatureMatrix:
    """One row per undirected edge ``(u, v)``, ``u < v``, one column per metric."""

    edges: np.ndarray
    values: np.ndarray
    names: tuple = METRICS

    def standardized(self):
        mean = self.values.mean(axis=0) if len(self.values) else 0.0
        std = self.values.std(axis=0) if len(self.values) else 1.0
        std = np.where(std > 0, std, 1.0)
        return EdgeFeatureMatrix(self.edges, (self.values - mean) / std, self.names)

    def max_scaled(self):
        """Columns divided by their maximum; keeps features nonnegative."""
        peak = self.values.max(axis=0) if len(self.values) else 1.0
        peak = np.where(peak > 0, peak, 1.0)
        return EdgeFeatureMatrix(self.edges, self.values / peak, self.names)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["u", "v", *self.names])
            for (u, v), row in zip(self.edges, self.values):
                writer.writerow([int(u), int(v), *(repr(float(x)) for x in row)])


def feature_matrix(graph, standardize=False):
    """All metrics for every undirected edge, computed with sparse products."""
    check_simple_graph(graph)
    edges = undirected_edges(graph)
    if len(edges) == 0:
        return EdgeFeatureMatrix(edges, np.zeros((0, len(METRICS))))
    a = graph.to_scipy()
    deg = np.asarray(a.sum(axis=1)).ravel()
    u, v = edges[:, 0], edges[:, 1]

    def pair_values(m):
        return np.asarray(m[u, v]).ravel()

    cn = pair_values(a @ a)
    with np.errstate(divide="ignore"):
        inv_log = np.where(deg > 1, 1.0 / np.log(np.maximum(deg, 2)), 0.0)
        inv_deg = np.where(deg > 0, 1.0 / np.maximum(deg, 1), 0.0)
    aa = pair_values(a.multiply(inv_log[None, :]).tocsr() @ a)
    ra = pair_values(a.multiply(inv_deg[None, :]).tocsr() @ a)
    du, dv = deg[u], deg[v]

    def ratio(num, den):
        return np.divide(num, den, out=np.zeros_like(num), where=den > 0)

    values = np.column_stack([
        cn,
        ratio(cn, du + dv - cn),
        ratio(cn, np.sqrt(du * dv)),
        ratio(2 * cn, du + dv),
        ratio(cn, np.minimum(du, dv)),
        ratio(cn, np.maximum(du, dv)),
        ratio(cn, du * dv),
        du * dv,
        aa,
        ra,
    ])
    out = EdgeFeatureMatrix(edges, values)
    return out.standardized() if standardize else out
