"""Sparse matrix containers and kernels used by every graph operation.

Dense matrices are plain 2-D ``float64`` numpy arrays. The sparse types are
small immutable wrappers over numpy index/value arrays; the sparse-dense
product is delegated to :mod:`scipy.sparse`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class StructureError(ValueError):
    """Raised when sparse structure or shapes are inconsistent."""


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


@dataclass(frozen=True, eq=False)
class CooMatrix:
    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if not (len(rows) == len(cols) == len(values)):
            raise StructureError("rows, cols and values must have equal length")
        if len(rows) and (
            rows.min() < 0 or rows.max() >= self.n_rows
            or cols.min() < 0 or cols.max() >= self.n_cols
        ):
            raise StructureError(
                f"index out of range for a {self.n_rows}x{self.n_cols} matrix"
            )
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", values)
        _freeze(rows, cols, values)

    @classmethod
    def from_entries(cls, shape, entries):
        n_rows, n_cols = shape
        if not entries:
            return cls(n_rows, n_cols, np.empty(0), np.empty(0), np.empty(0))
        r, c, v = zip(*entries)
        return cls(n_rows, n_cols, np.array(r), np.array(c), np.array(v, dtype=float))

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return len(self.values)

    def entries(self):
        return [
            (int(r), int(c), float(v))
            for r, c, v in zip(self.rows, self.cols, self.values)
        ]


@dataclass(frozen=True, eq=False)
class SupportPattern:
    """Structure of a CSR matrix without values."""

    n_rows: int
    n_cols: int
    indptr: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        _check_csr_structure(self.n_rows, self.n_cols, indptr, indices)
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        _freeze(indptr, indices)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return len(self.indices)

    @property
    def row_ids(self):
        """Row index of every stored position (storage order)."""
        return np.repeat(np.arange(self.n_rows), np.diff(self.indptr))

    def with_values(self, values):
        return CsrMatrix(self.n_rows, self.n_cols, self.indptr, self.indices, values)

    def find(self, rows, cols):
        """Storage positions of ``(rows, cols)``; -1 where not stored."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        keys = self.row_ids * self.n_cols + self.indices
        query = rows * self.n_cols + cols
        if len(keys) == 0:
            return np.full(len(query), -1, dtype=np.int64)
        pos = np.minimum(np.searchsorted(keys, query), len(keys) - 1)
        return np.where(keys[pos] == query, pos, -1)

    def __eq__(self, other):
        if not isinstance(other, SupportPattern):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    __hash__ = None


def _check_csr_structure(n_rows, n_cols, indptr, indices):
    if len(indptr) != n_rows + 1 or indptr[0] != 0 or indptr[-1] != len(indices):
        raise StructureError("indptr must have length n_rows+1, start at 0, end at nnz")
    if np.any(np.diff(indptr) < 0):
        raise StructureError("indptr must be nondecreasing")
    if len(indices):
        if indices.min() < 0 or indices.max() >= n_cols:
            raise StructureError("column index out of range")
        row_ids = np.repeat(np.arange(n_rows), np.diff(indptr))
        same_row = row_ids[1:] == row_ids[:-1]
        if np.any(np.diff(indices)[same_row] <= 0):
            raise StructureError("column indices must be strictly increasing within a row")


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    n_rows: int
    n_cols: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64).ravel()
        _check_csr_structure(self.n_rows, self.n_cols, indptr, indices)
        if len(values) != len(indices):
            raise StructureError("values must have one entry per stored index")
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)
        _freeze(indptr, indices, values)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return len(self.values)

    @property
    def pattern(self):
        return SupportPattern(self.n_rows, self.n_cols, self.indptr, self.indices)

    @property
    def row_ids(self):
        return np.repeat(np.arange(self.n_rows), np.diff(self.indptr))

    def __eq__(self, other):
        """Same pattern and bitwise-equal stored values."""
        if not isinstance(other, CsrMatrix):
            return NotImplemented
        return self.pattern == other.pattern and np.array_equal(self.values, other.values)

    __hash__ = None

    def to_coo(self):
        return CooMatrix(self.n_rows, self.n_cols, self.row_ids, self.indices, self.values)

    def to_scipy(self):
        return sp.csr_matrix(
            (self.values, self.indices, self.indptr), shape=self.shape
        )

    def toarray(self):
        out = np.zeros(self.shape)
        out[self.row_ids, self.indices] = self.values
        return out

    def row_sums(self):
        return np.bincount(self.row_ids, weights=np.abs(self.values), minlength=self.n_rows)

    def is_symmetric(self):
        t = self.pattern.find(self.indices, self.row_ids)
        return bool(np.all(t >= 0) and np.array_equal(self.values[t], self.values))

    @classmethod
    def from_scipy(cls, m):
        m = sp.csr_matrix(m, dtype=np.float64)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def from_dense(cls, a):
        a = np.asarray(a, dtype=np.float64)
        r, c = np.nonzero(a)
        return to_csr(CooMatrix(a.shape[0], a.shape[1], r, c, a[r, c]))

    @classmethod
    def from_edges(cls, n, edges, weights=None, symmetric=True):
        """Build an ``n x n`` adjacency from ``(u, v)`` pairs."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        w = np.ones(len(edges)) if weights is None else np.asarray(weights, float)
        r, c = edges[:, 0], edges[:, 1]
        if symmetric:
            off = r != c
            r, c, w = (
                np.concatenate([r, c[off]]),
                np.concatenate([c, r[off]]),
                np.concatenate([w, w[off]]),
            )
        return to_csr(canonicalize(CooMatrix(n, n, r, c, w)))

    @classmethod
    def identity(cls, n):
        idx = np.arange(n)
        return cls(n, n, np.arange(n + 1), idx, np.ones(n))

    @classmethod
    def zeros(cls, n_rows, n_cols):
        return cls(n_rows, n_cols, np.zeros(n_rows + 1, dtype=np.int64), np.empty(0), np.empty(0))

    def __repr__(self):
        return f"CsrMatrix(shape={self.shape}, nnz={self.nnz})"


def canonicalize(coo):
    """Sort entries row-major and sum duplicates in that order."""
    if coo.nnz == 0:
        return coo
    order = np.lexsort((coo.cols, coo.rows))
    r, c, v = coo.rows[order], coo.cols[order], coo.values[order]
    starts = np.flatnonzero(np.r_[True, (np.diff(r) != 0) | (np.diff(c) != 0)])
    if len(starts) == len(v):
        return CooMatrix(coo.n_rows, coo.n_cols, r, c, v)
    sums = np.array([
        float(sum(v[s:e].tolist()))
        for s, e in zip(starts, np.r_[starts[1:], len(v)])
    ])
    return CooMatrix(coo.n_rows, coo.n_cols, r[starts], c[starts], sums)


def to_csr(coo):
    coo = canonicalize(coo)
    counts = np.bincount(coo.rows, minlength=coo.n_rows)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return CsrMatrix(coo.n_rows, coo.n_cols, indptr, coo.cols, coo.values)


def as_dense(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise StructureError(f"expected a 2-D dense matrix, got ndim={x.ndim}")
    return x


def spmm(a, x):
    """Sparse-dense product ``a @ x``."""
    x = as_dense(x)
    if a.n_cols != x.shape[0]:
        raise StructureError(f"cannot multiply {a.shape} by {x.shape}")
    return np.asarray(a.to_scipy() @ x)


def add_self_loops(a, weight=1.0):
    if a.n_rows != a.n_cols:
        raise StructureError("self loops need a square matrix")
    n = a.n_rows
    coo = a.to_coo()
    idx = np.arange(n)
    return to_csr(CooMatrix(
        n, n,
        np.concatenate([coo.rows, idx]),
        np.concatenate([coo.cols, idx]),
        np.concatenate([coo.values, np.full(n, float(weight))]),
    ))


def sym_normalize(a, eps=1e-12):
    """Return ``D^{-1/2} A D^{-1/2}`` with degrees floored at ``eps``."""
    if a.n_rows != a.n_cols:
        raise StructureError("normalization needs a square matrix")
    if np.any(a.values < 0):
        raise ValueError("symmetric normalization requires nonnegative weights")
    scale = 1.0 / np.sqrt(np.maximum(a.row_sums(), eps))
    return a.pattern.with_values(a.values * scale[a.row_ids] * scale[a.indices])


def support_union(mats):
    if not mats:
        raise StructureError("support_union needs at least one matrix")
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise StructureError("all matrices must share one shape")
    rows = np.concatenate([m.row_ids for m in mats])
    cols = np.concatenate([m.indices for m in mats])
    keys = np.unique(rows * shape[1] + cols)
    r, c = np.divmod(keys, shape[1])
    counts = np.bincount(r, minlength=shape[0])
    return SupportPattern(shape[0], shape[1], np.concatenate([[0], np.cumsum(counts)]), c)


def stack_on_support(pattern, mats):
    """Values of each matrix at every pattern position, as an ``nnz x len(mats)`` array."""
    out = np.zeros((pattern.nnz, len(mats)))
    for k, m in enumerate(mats):
        if m.shape != pattern.shape:
            raise StructureError("matrix shape does not match pattern")
        pos = pattern.find(m.row_ids, m.indices)
        if np.any(pos < 0):
            raise StructureError(f"matrix {k} has entries outside the support pattern")
        out[pos, k] = m.values
    return out


def weighted_sum_on_support(pattern, mats, betas):
    betas = np.asarray(betas, dtype=np.float64)
    if len(betas) != len(mats):
        raise StructureError("need one beta per matrix")
    stacked = stack_on_support(pattern, mats)
    values = np.zeros(pattern.nnz)
    for k in range(len(mats)):
        values += betas[k] * stacked[:, k]
    return pattern.with_values(values)


def binarize(a):
    return a.pattern.with_values(np.ones(a.nnz))


def matrix_power_support(a, k):
    """Binary adjacency of pairs reachable by walks of length exactly ``k`` (no diagonal)."""
    m = binarize(a).to_scipy()
    p = m.copy()
    for _ in range(k - 1):
        p = p @ m
    p = sp.csr_matrix(p)
    p.setdiag(0)
    p.eliminate_zeros()
    p.data[:] = 1.0
    return CsrMatrix.from_scipy(p)
