"""Synthetic multiplex benchmarks.

:func:`generate` builds a stochastic-block-model graph whose node features
are correlated Gaussians, whose labels are quantile bins of a noisy linear
target, and whose edge features are Gaussian with a larger spread on
inter-class edges. :func:`watts_strogatz` builds the small-world graphs used
for runtime measurements.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dataset import GraphDataset
from .sparse import CsrMatrix


@dataclass(frozen=True)
class SyntheticConfig:
    C: int = 3
    n: int = 500
    P: float = 0.01
    Q: float = 0.005
    F: int = 32
    D: int = 32
    sigma_F: float = 5.0
    sigma_D: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.C < 2:
            raise ValueError("need at least two classes")
        if self.n < 1:
            raise ValueError("need at least one node per class")
        for name in ("P", "Q"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if self.F < 1 or self.D < 1:
            raise ValueError("feature dimensions must be positive")
        if self.sigma_F < 0 or self.sigma_D < 0:
            raise ValueError("standard deviations must be nonnegative")

    def replace(self, **changes):
        return SyntheticConfig(**{**asdict(self), **changes})


def random_correlation_matrix(F, rng):
    """Random correlation matrix with half-normal spectrum.

    Eigenvalues are ``|N(0, 1)|`` draws rescaled to sum to ``F``; the basis is
    the Q factor of a Gaussian matrix. The result is rescaled to unit diagonal.
    """
    if F < 1:
        raise ValueError("dimension must be positive")
    while True:
        eig = np.abs(rng.standard_normal(F))
        if eig.sum() > 0 and eig.min() > 0:
            break
    eig *= F / eig.sum()
    q, r = np.linalg.qr(rng.standard_normal((F, F)))
    q *= np.sign(np.diag(r))
    cov = (q * eig) @ q.T
    d = 1.0 / np.sqrt(np.diag(cov))
    corr = cov * d[:, None] * d[None, :]
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return corr


def sample_correlated_features(n_total, corr, rng):
    corr = np.asarray(corr, dtype=np.float64)
    try:
        chol = np.linalg.cholesky(corr)
    except np.linalg.LinAlgError as exc:
        raise ValueError("correlation matrix is not positive definite") from exc
    return rng.standard_normal((n_total, corr.shape[0])) @ chol.T


def quantile_bins(values, n_classes):
    """Balanced class labels by rank; ties keep index order."""
    order = np.argsort(values, kind="stable")
    labels = np.empty(len(values), dtype=np.int64)
    labels[order] = (np.arange(len(values)) * n_classes) // max(len(values), 1)
    return labels


def make_labels(x, w, sigma_F, n_classes, rng):
    """Returns ``(labels, noisy_target)``."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    target = x @ np.asarray(w, dtype=np.float64)
    noisy = target + sigma_F * rng.standard_normal(len(target))
    return quantile_bins(noisy, n_classes), noisy


def sample_sbm_edges(labels, P, Q, rng):
    """Sample each unordered pair once. Returns ``(graph, intra_mask)``.

    ``intra_mask`` is aligned with the upper-triangle storage order of
    ``graph`` (see :func:`pdnet.dataset.undirected_edges`).
    """
    labels = np.asarray(labels)
    n = len(labels)
    u, v = np.triu_indices(n, k=1)
    same = labels[u] == labels[v]
    prob = np.where(same, P, Q)
    keep = rng.random(len(u)) < prob
    edges = np.column_stack([u[keep], v[keep]])
    return CsrMatrix.from_edges(n, edges), same[keep]


def sample_edge_features(n_edges, intra_mask, D, sigma_D, rng):
    intra_mask = np.asarray(intra_mask, dtype=bool)
    if len(intra_mask) != n_edges:
        raise ValueError("mask length must equal the edge count")
    z = rng.standard_normal((n_edges, D))
    z[~intra_mask] *= sigma_D
    return z


def generate(config):
    rng = np.random.default_rng(config.seed)
    total = config.C * config.n
    corr = random_correlation_matrix(config.F, rng)
    x = sample_correlated_features(total, corr, rng)
    w = rng.standard_normal(config.F)
    labels, _ = make_labels(x, w, config.sigma_F, config.C, rng)
    graph, intra = sample_sbm_edges(labels, config.P, config.Q, rng)
    edge_features = sample_edge_features(len(intra), intra, config.D, config.sigma_D, rng)
    return GraphDataset(
        graph=graph,
        node_features=x,
        labels=labels,
        edge_features=edge_features,
        edge_class_mask=intra,
        meta={"generator": "sbm", **asdict(config)},
    )


def watts_strogatz(n, k, p_rewire, rng):
    """Small-world graph: ring lattice with each edge rewired with probability ``p_rewire``."""
    if k % 2:
        raise ValueError("k must be even")
    if k >= n:
        raise ValueError("k must be smaller than n")
    neighbours = [set() for _ in range(n)]
    for u in range(n):
        for j in range(1, k // 2 + 1):
            v = (u + j) % n
            neighbours[u].add(v)
            neighbours[v].add(u)
    for j in range(1, k // 2 + 1):
        coins = rng.random(n)
        for u in range(n):
            v = (u + j) % n
            if coins[u] >= p_rewire or v not in neighbours[u]:
                continue
            if len(neighbours[u]) >= n - 1:
                continue
            while True:
                w = int(rng.integers(n))
                if w != u and w not in neighbours[u]:
                    break
            neighbours[u].discard(v)
            neighbours[v].discard(u)
            neighbours[u].add(w)
            neighbours[w].add(u)
    edges = [(u, v) for u in range(n) for v in neighbours[u] if u < v]
    return CsrMatrix.from_edges(n, np.array(edges, dtype=np.int64).reshape(-1, 2))
