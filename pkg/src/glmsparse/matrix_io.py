"""Sparse-row storage for the data matrix and response vector, plus file I/O.

Two on-disk formats are supported: Matrix Market coordinate (real, general,
1-based indices) and dense CSV rows.  Response vectors are stored one value
per line.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

MM_HEADER = "%%MatrixMarket matrix coordinate real general"

# Largest dimension we accept; indices are stored as int64 but downstream
# dense factorizations are desk-scale only.
MAX_DIM = 2**31 - 1


class MatrixIOError(ValueError):
    """Base class for ingest failures."""


class ParseError(MatrixIOError):
    pass


class NonFiniteEntryError(MatrixIOError):
    pass


class DimensionOverflowError(MatrixIOError):
    pass


@dataclass(frozen=True, eq=False)
class RowMatrix:
    """Immutable CSR-style real matrix with exact per-row sparsity metadata.

    ``indptr``, ``indices`` and ``data`` follow the usual CSR layout.  Column
    indices are strictly increasing within each row and no explicit zeros are
    stored.
    """

    m: int
    n: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    r: int = field(init=False)

    def __post_init__(self):
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        m, n = int(self.m), int(self.n)
        if m < 1 or n < 1:
            raise DimensionOverflowError(f"dimensions must be positive, got {m}x{n}")
        if m > MAX_DIM or n > MAX_DIM:
            raise DimensionOverflowError(f"dimensions {m}x{n} exceed {MAX_DIM}")
        if indptr.shape != (m + 1,) or indptr[0] != 0 or np.any(np.diff(indptr) < 0):
            raise ValueError("malformed indptr")
        if indices.shape != data.shape or indptr[-1] != data.size:
            raise ValueError("indices/data length does not match indptr")
        if not np.all(np.isfinite(data)):
            raise NonFiniteEntryError("matrix contains a non-finite value")
        if np.any(data == 0.0):
            raise ValueError("explicit zeros are not allowed")
        if indices.size and (indices.min() < 0 or indices.max() >= n):
            raise ValueError("column index out of range")
        counts = np.diff(indptr)
        if indices.size > 1:
            step = np.diff(indices)
            # Only positions that do not cross a row boundary must increase.
            starts = indptr[1:-1]
            same_row = np.ones(indices.size - 1, dtype=bool)
            same_row[starts[(starts > 0) & (starts < indices.size)] - 1] = False
            if np.any(step[same_row] <= 0):
                raise ValueError("column indices must be strictly increasing within a row")
        for name, arr in (("indptr", indptr), ("indices", indices), ("data", data)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "r", int(counts.max()) if m else 0)

    # -- constructors -----------------------------------------------------
    @classmethod
    def from_dense(cls, dense) -> "RowMatrix":
        a = np.asarray(dense, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError("expected a 2-d array")
        if not np.all(np.isfinite(a)):
            raise NonFiniteEntryError("matrix contains a non-finite value")
        csr = sp.csr_matrix(a)
        csr.eliminate_zeros()
        csr.sort_indices()
        return cls(a.shape[0], a.shape[1], csr.indptr, csr.indices, csr.data)

    @classmethod
    def from_rows(cls, rows, n: int) -> "RowMatrix":
        """Build from a list of per-row ``[(col, value), ...]`` lists."""
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        for row in rows:
            for j, v in sorted(row):
                if v != 0.0:
                    indices.append(int(j))
                    data.append(float(v))
            indptr.append(len(data))
        return cls(len(indptr) - 1, n, np.array(indptr), np.array(indices, dtype=np.int64),
                   np.array(data, dtype=np.float64))

    @classmethod
    def from_scipy(cls, mat) -> "RowMatrix":
        csr = sp.csr_matrix(mat, dtype=np.float64)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        return cls(csr.shape[0], csr.shape[1], csr.indptr, csr.indices, csr.data)

    # -- views ------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.n)

    @property
    def nnz(self) -> int:
        return int(self.data.size)

    @property
    def row_counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def rows(self) -> list[list[tuple[int, float]]]:
        return [self.row(i) for i in range(self.m)]

    def row(self, i: int) -> list[tuple[int, float]]:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return [(int(j), float(v)) for j, v in zip(self.indices[lo:hi], self.data[lo:hi])]

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    @cached_property
    def dense(self) -> np.ndarray:
        """Read-only cached dense copy."""
        d = self.to_dense()
        d.setflags(write=False)
        return d

    def matvec(self, x) -> np.ndarray:
        """Row dot products <a_i, x> for every row."""
        return self.to_scipy() @ np.asarray(x, dtype=np.float64)

    def take_rows(self, idx) -> "RowMatrix":
        return RowMatrix.from_scipy(self.to_scipy()[np.asarray(idx, dtype=np.int64)])

    def __eq__(self, other):
        if not isinstance(other, RowMatrix):
            return NotImplemented
        return (self.shape == other.shape and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.data, other.data))

    def __repr__(self):
        return f"RowMatrix(m={self.m}, n={self.n}, r={self.r}, nnz={self.nnz})"


def as_response(b, m: int | None = None) -> np.ndarray:
    """Validate a response vector (finite, optionally of length ``m``)."""
    v = np.asarray(b, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("response vector must be 1-d")
    if m is not None and v.size != m:
        raise ValueError(f"response length {v.size} does not match m={m}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteEntryError("response vector contains a non-finite value")
    return v


def augment_bias(A: RowMatrix, b) -> RowMatrix:
    """Append ``b`` as column ``n`` so that <(a_i, b_i), (x, -1)> = <a_i, x> - b_i."""
    b = as_response(b)
    if b.size != A.m:
        raise ValueError(f"response length {b.size} does not match m={A.m}")
    csr = sp.hstack([A.to_scipy(), sp.csr_matrix(b.reshape(-1, 1))], format="csr")
    return RowMatrix.from_scipy(csr)


# -- parsing --------------------------------------------------------------

def _parse_float(tok: str, where: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"{where}: cannot parse {tok!r} as a number") from None
    if not math.isfinite(v):
        raise NonFiniteEntryError(f"{where}: non-finite entry {tok!r}")
    return v


def _parse_dim(tok: str, where: str) -> int:
    try:
        v = int(tok)
    except ValueError:
        raise ParseError(f"{where}: bad integer {tok!r}") from None
    if v > MAX_DIM:
        raise DimensionOverflowError(f"{where}: dimension {v} exceeds {MAX_DIM}")
    return v


def _read_matrix_market(text: str) -> RowMatrix:
    lines = text.splitlines()
    if not lines or lines[0].strip().lower() != MM_HEADER.lower():
        raise ParseError(f"expected header {MM_HEADER!r}")
    body = [(k, ln.strip()) for k, ln in enumerate(lines[1:], start=2)
            if ln.strip() and not ln.lstrip().startswith("%")]
    if not body:
        raise ParseError("missing size line")
    k, size = body[0]
    parts = size.split()
    if len(parts) != 3:
        raise ParseError(f"line {k}: size line needs 'm n nnz'")
    m, n, nnz = (_parse_dim(t, f"line {k}") for t in parts)
    if m < 1 or n < 1 or nnz < 0:
        raise ParseError(f"line {k}: invalid sizes")
    if len(body) - 1 != nnz:
        raise ParseError(f"declared {nnz} entries, found {len(body) - 1}")
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.float64)
    for e, (k, ln) in enumerate(body[1:]):
        parts = ln.split()
        if len(parts) != 3:
            raise ParseError(f"line {k}: expected 'i j value'")
        i, j = _parse_dim(parts[0], f"line {k}"), _parse_dim(parts[1], f"line {k}")
        if not (1 <= i <= m and 1 <= j <= n):
            raise DimensionOverflowError(f"line {k}: index ({i}, {j}) outside {m}x{n}")
        rows[e], cols[e], vals[e] = i - 1, j - 1, _parse_float(parts[2], f"line {k}")
    key = rows * n + cols
    if np.unique(key).size != key.size:
        raise ParseError("duplicate (row, col) entries")
    keep = vals != 0.0
    coo = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(m, n))
    return RowMatrix.from_scipy(coo)


def _read_csv(text: str) -> RowMatrix:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError("empty CSV")
    rows = []
    width = None
    for k, ln in enumerate(lines, start=1):
        toks = [t.strip() for t in ln.split(",")]
        if width is None:
            width = len(toks)
        elif len(toks) != width:
            raise ParseError(f"line {k}: expected {width} columns, found {len(toks)}")
        rows.append([_parse_float(t, f"line {k}") for t in toks])
    if len(rows) > MAX_DIM or width > MAX_DIM:
        raise DimensionOverflowError("CSV dimensions too large")
    return RowMatrix.from_dense(np.array(rows, dtype=np.float64))


def load_matrix(path, format: str | None = None) -> RowMatrix:
    """Read a matrix from ``path``; ``format`` is 'matrix-market' or 'csv'.

    When ``format`` is None it is inferred from the extension (.mtx/.mm vs
    anything else).
    """
    path = Path(path)
    fmt = format or ("matrix-market" if path.suffix.lower() in (".mtx", ".mm") else "csv")
    text = path.read_text()
    if fmt in ("matrix-market", "mtx", "mm"):
        return _read_matrix_market(text)
    if fmt == "csv":
        return _read_csv(text)
    raise ValueError(f"unknown matrix format {format!r}")


def save_matrix(A: RowMatrix, path, format: str = "matrix-market") -> None:
    path = Path(path)
    if format in ("matrix-market", "mtx", "mm"):
        out = [MM_HEADER, f"{A.m} {A.n} {A.nnz}"]
        for i in range(A.m):
            for j, v in A.row(i):
                out.append(f"{i + 1} {j + 1} {v!r}")
    elif format == "csv":
        out = [",".join(repr(float(v)) for v in row) for row in A.to_dense()]
    else:
        raise ValueError(f"unknown matrix format {format!r}")
    path.write_text("\n".join(out) + "\n")


def load_response(path) -> np.ndarray:
    vals = []
    for k, ln in enumerate(Path(path).read_text().splitlines(), start=1):
        if ln.strip():
            vals.append(_parse_float(ln.strip(), f"line {k}"))
    return np.array(vals, dtype=np.float64)


def save_response(b, path) -> None:
    Path(path).write_text("".join(f"{float(v)!r}\n" for v in as_response(b)))
