"""Compressed-sparse-row storage for differentiation matrices.

All discretized derivatives in training are applied through :func:`spmv`;
reverse-mode passes use an explicitly stored transpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import kernels


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.row_ptr.shape != (self.n_rows + 1,):
            raise ValueError("row_ptr must have length n_rows + 1")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != len(self.col_idx):
            raise ValueError("row_ptr must start at 0 and end at nnz")
        if len(self.values) != len(self.col_idx):
            raise ValueError("values and col_idx lengths differ")
        if np.any(np.diff(self.row_ptr) < 0):
            raise ValueError("row_ptr must be nondecreasing")
        if len(self.col_idx) and (self.col_idx.min() < 0 or self.col_idx.max() >= self.n_cols):
            raise ValueError("column index out of range")
        if len(self.col_idx) > 1:
            # a non-increasing step is only allowed where a new row starts
            drops = np.flatnonzero(np.diff(self.col_idx) <= 0) + 1
            if not np.all(np.isin(drops, self.row_ptr)):
                raise ValueError("column indices must increase strictly within each row")
        for arr in (self.row_ptr, self.col_idx, self.values):
            arr.setflags(write=False)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return len(self.values)

    @property
    def dtype(self):
        return self.values.dtype

    def row(self, i):
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[lo:hi], self.values[lo:hi]

    def to_dense(self):
        out = np.zeros(self.shape, dtype=self.values.dtype)
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.row_ptr))
        out[rows, self.col_idx] = self.values
        return out

    def astype(self, dtype):
        return CsrMatrix(self.n_rows, self.n_cols, self.row_ptr, self.col_idx,
                         self.values.astype(dtype))

    def __matmul__(self, v):
        v = np.asarray(v)
        if v.ndim == 1:
            return spmv(self, v)
        return spmm(self, v)

    @property
    def T(self):
        return transpose(self)


def from_triplets(n_rows, n_cols, entries=None, *, rows=None, cols=None, vals=None,
                  dtype=np.float64):
    """Build a canonical CSR matrix from (row, col, value) triplets.

    Either pass ``entries`` as an iterable of 3-tuples or the three parallel
    arrays ``rows``, ``cols``, ``vals``. Duplicate (row, col) pairs are summed.
    """
    if entries is not None:
        entries = list(entries)
        rows = np.array([e[0] for e in entries], dtype=np.int64)
        cols = np.array([e[1] for e in entries], dtype=np.int64)
        vals = np.array([e[2] for e in entries], dtype=np.float64)
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=np.float64).ravel()
    if not (len(rows) == len(cols) == len(vals)):
        raise ValueError("triplet arrays must have equal length")
    if len(rows) and (rows.min() < 0 or rows.max() >= n_rows
                      or cols.min() < 0 or cols.max() >= n_cols):
        raise IndexError("triplet index out of range")

    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if len(rows):
        new = np.ones(len(rows), dtype=bool)
        new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        starts = np.flatnonzero(new)
        # summed in input order of equal keys (lexsort is stable)
        vals = np.add.reduceat(vals, starts)
        rows, cols = rows[starts], cols[starts]
    row_ptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.add.at(row_ptr, rows + 1, 1)
    row_ptr = np.cumsum(row_ptr)
    return CsrMatrix(int(n_rows), int(n_cols), row_ptr, cols.astype(np.int64),
                     vals.astype(dtype))


def from_dense(a, dtype=None):
    a = np.asarray(a)
    r, c = np.nonzero(a)
    return from_triplets(a.shape[0], a.shape[1], rows=r, cols=c, vals=a[r, c],
                         dtype=dtype or a.dtype)


def spmv(m: CsrMatrix, v) -> np.ndarray:
    """Row-wise dot products; each row summed in ascending column order."""
    v = np.ascontiguousarray(v, dtype=m.values.dtype)
    if v.shape != (m.n_cols,):
        raise ValueError(f"spmv: vector of length {v.shape} for matrix {m.shape}")
    out = np.empty(m.n_rows, dtype=m.values.dtype)
    kernels.csr_spmv(m.row_ptr, m.col_idx, m.values, v, out)
    return out


def spmm(m: CsrMatrix, V) -> np.ndarray:
    """M @ V for a 2-D block V of shape (n_cols, k)."""
    V = np.ascontiguousarray(V, dtype=m.values.dtype)
    if V.ndim != 2 or V.shape[0] != m.n_cols:
        raise ValueError(f"spmm: block of shape {V.shape} for matrix {m.shape}")
    out = np.empty((m.n_rows, V.shape[1]), dtype=m.values.dtype)
    kernels.csr_spmm(m.row_ptr, m.col_idx, m.values, V, out)
    return out


def transpose(m: CsrMatrix) -> CsrMatrix:
    rows = np.repeat(np.arange(m.n_rows, dtype=np.int64), np.diff(m.row_ptr))
    order = np.lexsort((rows, m.col_idx))
    t_cols = rows[order]
    t_vals = m.values[order]
    row_ptr = np.zeros(m.n_cols + 1, dtype=np.int64)
    np.add.at(row_ptr, m.col_idx + 1, 1)
    row_ptr = np.cumsum(row_ptr)
    return CsrMatrix(m.n_cols, m.n_rows, row_ptr, t_cols, t_vals.copy())


def write_matrix(path, m: CsrMatrix):
    """Text dump: ``rows cols nnz`` header then 0-based ``row col value`` lines."""
    rows = np.repeat(np.arange(m.n_rows), np.diff(m.row_ptr))
    with open(path, "w") as fh:
        fh.write(f"{m.n_rows} {m.n_cols} {m.nnz}\n")
        for r, c, v in zip(rows, m.col_idx, m.values):
            fh.write(f"{r} {c} {float(v):.17g}\n")


def read_matrix(path, dtype=np.float64) -> CsrMatrix:
    with open(path) as fh:
        n_rows, n_cols, nnz = (int(t) for t in fh.readline().split())
        data = np.loadtxt(fh, dtype=np.float64, ndmin=2) if nnz else np.zeros((0, 3))
    if len(data) != nnz:
        raise ValueError(f"{path}: header says {nnz} entries, found {len(data)}")
    return from_triplets(n_rows, n_cols, rows=data[:, 0].astype(np.int64),
                         cols=data[:, 1].astype(np.int64), vals=data[:, 2], dtype=dtype)
