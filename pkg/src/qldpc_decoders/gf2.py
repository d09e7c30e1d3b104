"""Bit-packed GF(2) matrices and vectors.

Rows are stored as little-endian ``uint64`` words: column ``j`` lives in word
``j // 64`` at bit ``j % 64``.  Bits past ``cols`` in the last word are always
zero, so row equality and popcounts can work on whole words.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

WORD_BITS = 64


class GF2Error(ValueError):
    """Raised on dimension mismatches and unsolvable systems."""


def _nwords(cols: int) -> int:
    return (cols + WORD_BITS - 1) // WORD_BITS


def _pack(bits: np.ndarray) -> np.ndarray:
    """Pack a 2D 0/1 array into (rows, nwords) uint64 words."""
    rows, cols = bits.shape
    nw = _nwords(cols)
    padded = np.zeros((rows, nw * WORD_BITS), dtype=np.uint8)
    padded[:, :cols] = bits
    packed = np.packbits(padded, axis=1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8").astype(np.uint64, copy=False).reshape(rows, nw)


def _unpack(words: np.ndarray, cols: int) -> np.ndarray:
    rows = words.shape[0]
    as_bytes = np.ascontiguousarray(words.astype("<u8", copy=False)).view(np.uint8).reshape(rows, -1)
    return np.unpackbits(as_bytes, axis=1, bitorder="little")[:, :cols]


def _bit(words: np.ndarray, col: int) -> np.ndarray:
    """Column ``col`` of packed rows as a bool array."""
    w, b = divmod(col, WORD_BITS)
    return ((words[..., w] >> np.uint64(b)) & np.uint64(1)).astype(bool)


@dataclass(frozen=True, eq=False)
class BinVector:
    len: int
    data: np.ndarray

    @classmethod
    def from_bits(cls, bits: Iterable[int] | np.ndarray) -> "BinVector":
        arr = np.asarray(bits, dtype=np.uint8).ravel() & 1
        return cls(arr.size, _pack(arr[None, :])[0])

    @classmethod
    def zeros(cls, length: int) -> "BinVector":
        return cls(length, np.zeros(_nwords(length), dtype=np.uint64))

    @classmethod
    def unit(cls, length: int, index: int) -> "BinVector":
        bits = np.zeros(length, dtype=np.uint8)
        bits[index] = 1
        return cls.from_bits(bits)

    @classmethod
    def from_string(cls, text: str) -> "BinVector":
        return cls.from_bits([int(ch) for ch in text.strip()])

    def to_bits(self) -> np.ndarray:
        return _unpack(self.data[None, :], self.len)[0]

    def weight(self) -> int:
        return int(np.bitwise_count(self.data).sum())

    def __xor__(self, other: "BinVector") -> "BinVector":
        if self.len != other.len:
            raise GF2Error(f"xor: length mismatch {self.len} vs {other.len}")
        return BinVector(self.len, self.data ^ other.data)

    def __getitem__(self, i: int) -> int:
        return int(_bit(self.data, i))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinVector):
            return NotImplemented
        return self.len == other.len and bool(np.array_equal(self.data, other.data))

    def __hash__(self) -> int:
        return hash((self.len, self.data.tobytes()))

    def __repr__(self) -> str:
        return f"BinVector('{''.join(map(str, self.to_bits()))}')"


@dataclass(frozen=True, eq=False)
class BinMatrix:
    rows: int
    cols: int
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != (self.rows, _nwords(self.cols)):
            raise GF2Error(f"packed data shape {self.data.shape} does not fit {self.rows}x{self.cols}")

    @classmethod
    def from_dense(cls, bits) -> "BinMatrix":
        arr = np.asarray(bits, dtype=np.uint8)
        if arr.ndim != 2:
            raise GF2Error(f"expected a 2D array, got shape {arr.shape}")
        return cls(arr.shape[0], arr.shape[1], _pack(arr & 1))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "BinMatrix":
        return cls(rows, cols, np.zeros((rows, _nwords(cols)), dtype=np.uint64))

    @classmethod
    def identity(cls, n: int) -> "BinMatrix":
        return cls.from_dense(np.eye(n, dtype=np.uint8))

    @classmethod
    def from_rows(cls, rows: Sequence[BinVector], cols: int | None = None) -> "BinMatrix":
        if not rows:
            return cls.zeros(0, cols or 0)
        return cls(len(rows), rows[0].len, np.stack([r.data for r in rows]))

    def to_dense(self) -> np.ndarray:
        return _unpack(self.data, self.cols)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def row(self, i: int) -> BinVector:
        return BinVector(self.cols, self.data[i].copy())

    def column(self, j: int) -> BinVector:
        return BinVector.from_bits(_bit(self.data, j).astype(np.uint8))

    def transpose(self) -> "BinMatrix":
        return BinMatrix.from_dense(self.to_dense().T)

    @property
    def T(self) -> "BinMatrix":
        return self.transpose()

    def row_weights(self) -> np.ndarray:
        return np.bitwise_count(self.data).sum(axis=1).astype(int)

    def col_weights(self) -> np.ndarray:
        return self.to_dense().sum(axis=0).astype(int)

    def nnz(self) -> int:
        return int(np.bitwise_count(self.data).sum())

    def is_zero(self) -> bool:
        return not self.data.any()

    def select_rows(self, idx) -> "BinMatrix":
        idx = np.asarray(idx, dtype=int)
        return BinMatrix(idx.size, self.cols, self.data[idx].copy())

    def select_cols(self, idx) -> "BinMatrix":
        return BinMatrix.from_dense(self.to_dense()[:, np.asarray(idx, dtype=int)])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinMatrix):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self) -> int:
        return hash((self.rows, self.cols, self.data.tobytes()))

    def __repr__(self) -> str:
        return f"BinMatrix({self.rows}x{self.cols}, nnz={self.nnz()})"

    # text format: "rows cols" then one '0'/'1' line per row
    def to_text(self) -> str:
        dense = self.to_dense()
        lines = [f"{self.rows} {self.cols}"]
        lines += ["".join("1" if b else "0" for b in r) for r in dense]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "BinMatrix":
        lines = [ln.strip() for ln in text.strip().splitlines()]
        rows, cols = map(int, lines[0].split())
        body = lines[1 : 1 + rows]
        if len(body) != rows or any(len(ln) != cols for ln in body):
            raise GF2Error("malformed matrix text: row count or width disagrees with header")
        if rows == 0:
            return cls.zeros(0, cols)
        dense = np.array([[1 if ch == "1" else 0 for ch in ln] for ln in body], dtype=np.uint8)
        return cls.from_dense(dense)


def hstack(*mats: BinMatrix) -> BinMatrix:
    return BinMatrix.from_dense(np.hstack([m.to_dense() for m in mats]))


def vstack(*mats: BinMatrix) -> BinMatrix:
    cols = {m.cols for m in mats}
    if len(cols) != 1:
        raise GF2Error(f"vstack: column counts differ {sorted(cols)}")
    return BinMatrix(sum(m.rows for m in mats), mats[0].cols, np.vstack([m.data for m in mats]))


def block_diag(a: BinMatrix, b: BinMatrix) -> BinMatrix:
    out = np.zeros((a.rows + b.rows, a.cols + b.cols), dtype=np.uint8)
    out[: a.rows, : a.cols] = a.to_dense()
    out[a.rows :, a.cols :] = b.to_dense()
    return BinMatrix.from_dense(out)


def mat_mul(a: BinMatrix, b: BinMatrix) -> BinMatrix:
    """Product over GF(2): row i of the result is the XOR of rows k of ``b`` with a[i, k] = 1."""
    if a.cols != b.rows:
        raise GF2Error(f"mat_mul: {a.rows}x{a.cols} times {b.rows}x{b.cols}")
    out = np.zeros((a.rows, b.data.shape[1]), dtype=np.uint64)
    dense_a = a.to_dense().astype(bool)
    for k in np.flatnonzero(dense_a.any(axis=0)):
        out[dense_a[:, k]] ^= b.data[k]
    return BinMatrix(a.rows, b.cols, out)


def mat_vec(a: BinMatrix, x: BinVector) -> BinVector:
    if a.cols != x.len:
        raise GF2Error(f"mat_vec: {a.rows}x{a.cols} times vector of length {x.len}")
    parity = (np.bitwise_count(a.data & x.data).sum(axis=1) & 1).astype(np.uint8)
    return BinVector.from_bits(parity)


def kron(a: BinMatrix, b: BinMatrix) -> BinMatrix:
    """Kronecker product; block (i, j) of the result is a[i, j] * b."""
    return BinMatrix.from_dense(np.kron(a.to_dense(), b.to_dense()))


def _eliminate(words: np.ndarray, order: Iterable[int]) -> list[int]:
    """Full Gauss-Jordan elimination in place, visiting columns in ``order``.

    The pivot row for each column is the lowest-index row at or below the
    current pivot position.  Returns pivot columns in visit order.
    """
    nrows = words.shape[0]
    pivots: list[int] = []
    r = 0
    for c in order:
        if r == nrows:
            break
        col = _bit(words, c)
        below = np.flatnonzero(col[r:])
        if below.size == 0:
            continue
        p = r + int(below[0])
        if p != r:
            words[[r, p]] = words[[p, r]]
            col[[r, p]] = col[[p, r]]
        col[r] = False
        if col.any():
            words[col] ^= words[r]
        pivots.append(int(c))
        r += 1
    return pivots


def _check_permutation(order, n: int) -> np.ndarray:
    order = np.asarray(order, dtype=int)
    if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
        raise GF2Error(f"column_order must be a permutation of 0..{n - 1}")
    return order


def rref(a: BinMatrix, column_order=None) -> tuple[BinMatrix, list[int], int]:
    """Reduced row echelon form visiting columns in ``column_order``.

    Returns ``(reduced, pivots, rank)`` with pivots listed in visit order.
    """
    order = np.arange(a.cols) if column_order is None else _check_permutation(column_order, a.cols)
    words = a.data.copy()
    pivots = _eliminate(words, order)
    return BinMatrix(a.rows, a.cols, words), pivots, len(pivots)


def rank(a: BinMatrix) -> int:
    return len(_eliminate(a.data.copy(), range(a.cols)))


def solve_with_pivots(a: BinMatrix, b: BinVector, pivots: Sequence[int]) -> BinVector:
    """Solve ``a @ x = b`` using only the columns in ``pivots``.

    The returned ``x`` is supported on ``pivots``.  Raises ``GF2Error`` if the
    pivot columns are dependent or ``b`` lies outside their span.
    """
    if b.len != a.rows:
        raise GF2Error(f"solve: rhs length {b.len} != rows {a.rows}")
    pivots = [int(p) for p in pivots]
    sub = a.to_dense()[:, pivots]
    aug = BinMatrix.from_dense(np.hstack([sub, b.to_bits()[:, None]]))
    words = aug.data.copy()
    found = _eliminate(words, range(len(pivots)))
    if len(found) != len(pivots):
        raise GF2Error("solve: pivot columns are linearly dependent")
    rhs = _bit(words, len(pivots))
    if rhs[len(pivots):].any():
        raise GF2Error("solve: right-hand side is not in the span of the pivot columns")
    x = np.zeros(a.cols, dtype=np.uint8)
    x[pivots] = rhs[: len(pivots)]
    return BinVector.from_bits(x)


def in_rowspace(a: BinMatrix, x: BinVector) -> bool:
    if x.len != a.cols:
        raise GF2Error(f"in_rowspace: vector length {x.len} != cols {a.cols}")
    base = rank(a)
    return rank(vstack(a, BinMatrix(1, a.cols, x.data[None, :].copy()))) == base


def circulant(v: BinVector) -> BinMatrix:
    """Square matrix whose row i is ``v`` cyclically shifted right by i."""
    if v.len < 1:
        raise GF2Error("circulant: empty vector")
    bits = v.to_bits()
    return BinMatrix.from_dense(np.stack([np.roll(bits, i) for i in range(v.len)]))


def nullspace(a: BinMatrix) -> BinMatrix:
    """Basis of {x : a @ x = 0} as rows."""
    reduced, pivots, r = rref(a)
    dense = reduced.to_dense()[:r]
    free = [j for j in range(a.cols) if j not in set(pivots)]
    basis = np.zeros((len(free), a.cols), dtype=np.uint8)
    for i, f in enumerate(free):
        basis[i, f] = 1
        basis[i, pivots] = dense[:, f]
    return BinMatrix.from_dense(basis) if free else BinMatrix.zeros(0, a.cols)


class RowspaceTester:
    """Batched membership test against a fixed rowspace.

    ``x`` is in the rowspace iff reducing it by the fully-reduced basis leaves
    zero, i.e. ``x == x[pivots] @ basis`` over GF(2).
    """

    def __init__(self, a: BinMatrix):
        reduced, pivots, r = rref(a)
        self.pivots = np.asarray(pivots, dtype=int)
        self.basis = reduced.to_dense()[:r].astype(np.int64)
        self.cols = a.cols

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.int64))
        if x.shape[1] != self.cols:
            raise GF2Error(f"rowspace test: width {x.shape[1]} != {self.cols}")
        if self.pivots.size == 0:
            return ~x.any(axis=1)
        recon = (x[:, self.pivots] @ self.basis) & 1
        return np.all(recon == x, axis=1)
