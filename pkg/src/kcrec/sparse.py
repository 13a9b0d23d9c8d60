"""Immutable CSR sparse matrix with a canonical form.

Entries are kept sorted by (row, col) with no duplicates and no explicit
zeros, so two matrices with the same entries compare equal bit-for-bit and
serialize to identical text.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from kcrec import kernels
from kcrec.errors import DomainError, FormatError, ShapeError


class SparseMatrix:
    __slots__ = ("shape", "indptr", "indices", "data")

    def __init__(self, shape, indptr, indices, data):
        # trusted constructor: callers guarantee canonical CSR arrays
        self.shape = (int(shape[0]), int(shape[1]))
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=np.float64)
        for arr in (self.indptr, self.indices, self.data):
            arr.setflags(write=False)

    # -- construction -------------------------------------------------
    @classmethod
    def from_coo(cls, rows, cols, values, shape) -> "SparseMatrix":
        """Build from triplets; duplicate coordinates are summed, zeros dropped."""
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.broadcast_to(np.asarray(values, dtype=np.float64), rows.shape).ravel()
        n, m = int(shape[0]), int(shape[1])
        if rows.shape != cols.shape:
            raise ShapeError("row and column index arrays differ in length")
        if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= m):
            raise ShapeError(f"index out of range for shape {(n, m)}")
        if not np.all(np.isfinite(values)):
            raise DomainError("sparse entries must be finite")
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        if rows.size:
            key = rows * m + cols
            first = np.ones(rows.size, dtype=bool)
            first[1:] = key[1:] != key[:-1]
            starts = np.flatnonzero(first)
            values = np.add.reduceat(values, starts)
            rows, cols = rows[starts], cols[starts]
        keep = values != 0.0
        rows, cols, values = rows[keep], cols[keep], values[keep]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        return cls((n, m), indptr, cols, values)

    @classmethod
    def from_dense(cls, dense) -> "SparseMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim != 2:
            raise ShapeError("expected a 2-D array")
        rows, cols = np.nonzero(dense)
        return cls.from_coo(rows, cols, dense[rows, cols], dense.shape)

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        coo = sp.coo_matrix(m)
        return cls.from_coo(coo.row, coo.col, coo.data, coo.shape)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        idx = np.arange(n, dtype=np.int64)
        return cls((n, n), np.arange(n + 1, dtype=np.int64), idx, np.ones(n))

    @classmethod
    def zeros(cls, shape) -> "SparseMatrix":
        return cls(shape, np.zeros(int(shape[0]) + 1, dtype=np.int64), [], [])

    # -- views --------------------------------------------------------
    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.shape[0], dtype=np.int64), np.diff(self.indptr))

    def to_coo(self):
        return self.row_ids(), self.indices.copy(), self.data.copy()

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.row_ids(), self.indices] = self.data
        return out

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    @property
    def T(self) -> "SparseMatrix":
        r, c, v = self.to_coo()
        return SparseMatrix.from_coo(c, r, v, (self.shape[1], self.shape[0]))

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.row_ids(), weights=self.data, minlength=self.shape[0]).astype(np.float64)

    def block(self, row_start, row_stop, col_start, col_stop) -> "SparseMatrix":
        r, c, v = self.to_coo()
        keep = (r >= row_start) & (r < row_stop) & (c >= col_start) & (c < col_stop)
        return SparseMatrix.from_coo(
            r[keep] - row_start, c[keep] - col_start, v[keep],
            (row_stop - row_start, col_stop - col_start),
        )

    # -- arithmetic ---------------------------------------------------
    def scale(self, factor: float) -> "SparseMatrix":
        r, c, v = self.to_coo()
        return SparseMatrix.from_coo(r, c, v * factor, self.shape)

    def scale_rows(self, factors) -> "SparseMatrix":
        factors = np.asarray(factors, dtype=np.float64)
        r, c, v = self.to_coo()
        return SparseMatrix.from_coo(r, c, v * factors[r], self.shape)

    def __add__(self, other: "SparseMatrix") -> "SparseMatrix":
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        if other.shape != self.shape:
            raise ShapeError(f"cannot add {self.shape} and {other.shape}")
        r1, c1, v1 = self.to_coo()
        r2, c2, v2 = other.to_coo()
        return SparseMatrix.from_coo(
            np.concatenate([r1, r2]), np.concatenate([c1, c2]), np.concatenate([v1, v2]), self.shape
        )

    def matmul_dense(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        vec = x.ndim == 1
        x2 = x[:, None] if vec else x
        if x2.shape[0] != self.shape[1]:
            raise ShapeError(f"cannot multiply {self.shape} by {x.shape}")
        out = kernels.csr_matmul(self.indptr, self.indices, self.data, x2, self.shape[0])
        return out[:, 0] if vec else out

    def rmatmul_dense(self, g) -> np.ndarray:
        """Return ``self.T @ g`` without materializing the transpose."""
        g = np.asarray(g, dtype=np.float64)
        vec = g.ndim == 1
        g2 = g[:, None] if vec else g
        if g2.shape[0] != self.shape[0]:
            raise ShapeError(f"cannot multiply transpose of {self.shape} by {g.shape}")
        out = kernels.csr_matmul_t(self.indptr, self.indices, self.data, g2, self.shape[1])
        return out[:, 0] if vec else out

    def __matmul__(self, other):
        if isinstance(other, SparseMatrix):
            if self.shape[1] != other.shape[0]:
                raise ShapeError(f"cannot multiply {self.shape} by {other.shape}")
            return SparseMatrix.from_scipy(self.to_scipy() @ other.to_scipy())
        if isinstance(other, np.ndarray):
            return self.matmul_dense(other)
        return NotImplemented

    # -- equality / text form -----------------------------------------
    def __eq__(self, other):
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None

    def __repr__(self):
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"

    def serialize(self) -> str:
        lines = [f"sparse {self.shape[0]} {self.shape[1]} {self.nnz}"]
        for r, c, v in zip(self.row_ids().tolist(), self.indices.tolist(), self.data.tolist()):
            lines.append(f"{r} {c} {v!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "SparseMatrix":
        lines = text.splitlines()
        if not lines:
            raise FormatError("empty sparse matrix text")
        head = lines[0].split()
        if len(head) != 4 or head[0] != "sparse":
            raise FormatError(f"bad sparse header: {lines[0]!r}")
        n, m, nnz = int(head[1]), int(head[2]), int(head[3])
        body = lines[1:1 + nnz]
        if len(body) != nnz:
            raise FormatError(f"expected {nnz} entries, found {len(body)}")
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz)
        for k, line in enumerate(body):
            parts = line.split()
            if len(parts) != 3:
                raise FormatError(f"entry line {k + 2}: expected 3 fields")
            rows[k], cols[k], vals[k] = int(parts[0]), int(parts[1]), float(parts[2])
        return cls.from_coo(rows, cols, vals, (n, m))


def degree_normalize(a: SparseMatrix) -> SparseMatrix:
    """Divide each nonzero row by its sum; zero rows stay zero."""
    if a.nnz and a.data.min() < 0:
        raise DomainError("degree normalization requires nonnegative entries")
    sums = a.row_sums()
    inv = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
    return a.scale_rows(inv)
