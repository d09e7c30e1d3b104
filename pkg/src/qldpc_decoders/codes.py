"""CSS quantum LDPC code construction: hypergraph-product and bicycle codes."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .gf2 import (
    BinMatrix,
    BinVector,
    block_diag,
    circulant,
    hstack,
    kron,
    mat_mul,
    rank,
)


class CodeConstructionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClassicalCode:
    H: BinMatrix
    n: int
    k: int
    d: int | None = None
    name: str = ""

    @classmethod
    def from_parity_check(cls, H: BinMatrix, d: int | None = None, name: str = "") -> "ClassicalCode":
        return cls(H, H.cols, H.cols - rank(H), d, name)


@dataclass(frozen=True)
class CssCode:
    """A CSS code given by its X- and Z-type check matrices.

    The syndrome of an error ``(x|z)`` is ``(Hz @ x, Hx @ z)``; the decoding
    graph therefore attaches x-bits to the rows of ``Hz`` and z-bits to the
    rows of ``Hx``.
    """

    Hx: BinMatrix
    Hz: BinMatrix
    name: str = ""
    metadata: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.Hx.cols != self.Hz.cols:
            raise CodeConstructionError(f"Hx has {self.Hx.cols} columns but Hz has {self.Hz.cols}")
        if not mat_mul(self.Hx, self.Hz.T).is_zero():
            raise CodeConstructionError(f"{self.name or 'code'}: Hx Hz^T != 0")
        object.__setattr__(self, "_rank_x", rank(self.Hx))
        object.__setattr__(self, "_rank_z", rank(self.Hz))

    @property
    def n(self) -> int:
        return self.Hx.cols

    @property
    def k(self) -> int:
        return self.n - self._rank_x - self._rank_z

    @property
    def m(self) -> int:
        return self.Hx.rows + self.Hz.rows

    @property
    def rank_x(self) -> int:
        return self._rank_x

    @property
    def rank_z(self) -> int:
        return self._rank_z

    @property
    def row_bound(self) -> int:
        return int(max(self.Hx.row_weights().max(initial=0), self.Hz.row_weights().max(initial=0)))

    @property
    def col_bound(self) -> int:
        return int(max(self.Hx.col_weights().max(initial=0), self.Hz.col_weights().max(initial=0)))

    @property
    def decoding_matrix(self) -> BinMatrix:
        """Matrix mapping ``(x|z)`` to the syndrome ``(s_x|s_z)``: blockdiag(Hz, Hx)."""
        return block_diag(self.Hz, self.Hx)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.Hx.to_text().encode())
        h.update(self.Hz.to_text().encode())
        return h.hexdigest()[:16]

    def summary(self) -> str:
        return (
            f"{self.name}: [[{self.n}, {self.k}]] m={self.m} "
            f"(Hx {self.Hx.rows}x{self.n}, Hz {self.Hz.rows}x{self.n}) "
            f"row weight <= {self.row_bound}, column weight <= {self.col_bound}"
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "n": self.n,
            "k": self.k,
            "Hx": self.Hx.to_text(),
            "Hz": self.Hz.to_text(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "CssCode":
        code = cls(
            BinMatrix.from_text(doc["Hx"]),
            BinMatrix.from_text(doc["Hz"]),
            name=doc.get("name", ""),
            metadata=doc.get("metadata", {}),
        )
        if code.n != doc["n"] or code.k != doc["k"]:
            raise CodeConstructionError(
                f"bundle says [[{doc['n']},{doc['k']}]] but matrices give [[{code.n},{code.k}]]"
            )
        return code

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CssCode":
        return cls.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# classical seeds


def _poly_bits(exponents: list[int]) -> int:
    return sum(1 << e for e in exponents)


def _polymod(a: int, g: int) -> int:
    dg = g.bit_length() - 1
    while a and a.bit_length() - 1 >= dg:
        a ^= g << (a.bit_length() - 1 - dg)
    return a


def systematic_parity_check(n: int, generator_exponents: list[int]) -> BinMatrix:
    """Parity check ``[P^T | I]`` of the cyclic code generated by ``g(x)``.

    Message bit i is encoded as ``x^(n-k+i)`` plus its remainder mod g, so
    ``G = [I_k | P]`` with row i of ``P`` the remainder's coefficients.
    """
    g = _poly_bits(generator_exponents)
    r = g.bit_length() - 1
    k = n - r
    P = np.zeros((k, r), dtype=np.uint8)
    for i in range(k):
        rem = _polymod(1 << (r + i), g)
        P[i] = [(rem >> j) & 1 for j in range(r)]
    return BinMatrix.from_dense(np.hstack([P.T, np.eye(r, dtype=np.uint8)]))


BCH_7_4_GENERATOR = [3, 1, 0]
BCH_15_7_GENERATOR = [8, 7, 6, 4, 0]


def bch_seed_codes() -> tuple[ClassicalCode, ClassicalCode]:
    h1 = systematic_parity_check(7, BCH_7_4_GENERATOR)
    h2 = systematic_parity_check(15, BCH_15_7_GENERATOR)
    return (
        ClassicalCode.from_parity_check(h1, d=3, name="bch_7_4_3"),
        ClassicalCode.from_parity_check(h2, d=5, name="bch_15_7_5"),
    )


def repetition_code(n: int) -> ClassicalCode:
    H = np.zeros((n - 1, n), dtype=np.uint8)
    for i in range(n - 1):
        H[i, i] = H[i, i + 1] = 1
    return ClassicalCode.from_parity_check(BinMatrix.from_dense(H), d=n, name=f"rep_{n}")


def minimum_distance(code: ClassicalCode) -> int:
    """Exhaustive minimum distance; only for small k."""
    from .gf2 import nullspace

    basis = nullspace(code.H).to_dense().astype(np.int64)
    k = basis.shape[0]
    if k == 0:
        return 0
    if k > 20:
        raise ValueError(f"minimum_distance: k={k} too large to enumerate")
    msgs = ((np.arange(1, 2**k)[:, None] >> np.arange(k)) & 1).astype(np.int64)
    words = (msgs @ basis) & 1
    return int(words.sum(axis=1).min())


# ---------------------------------------------------------------------------
# quantum constructions


def build_hgp(c1: ClassicalCode, c2: ClassicalCode, name: str | None = None) -> CssCode:
    """Hypergraph product of two classical codes.

    Hx = [H1 (x) I_n2 | I_m1 (x) H2^T],  Hz = [I_n1 (x) H2 | H1^T (x) I_m2].
    """
    H1, H2 = c1.H, c2.H
    m1, n1 = H1.shape
    m2, n2 = H2.shape
    Hx = hstack(kron(H1, BinMatrix.identity(n2)), kron(BinMatrix.identity(m1), H2.T))
    Hz = hstack(kron(BinMatrix.identity(n1), H2), kron(H1.T, BinMatrix.identity(m2)))
    meta = {"family": "hgp", "seeds": [c1.name, c2.name], "H1": H1.to_text(), "H2": H2.to_text()}
    try:
        return CssCode(Hx, Hz, name=name or f"hgp_{n1 * n2 + m1 * m2}", metadata=meta)
    except CodeConstructionError as exc:
        raise CodeConstructionError(f"hypergraph product failed orthogonality: {exc}") from exc


def build_hgp_bch() -> CssCode:
    c1, c2 = bch_seed_codes()
    code = build_hgp(c1, c2)
    return CssCode(
        code.Hx,
        code.Hz,
        name=f"hgp_{code.n}_{code.k}",
        metadata={**code.metadata, "generators": [BCH_7_4_GENERATOR, BCH_15_7_GENERATOR]},
    )


def uniform_deletion(H: np.ndarray, count: int) -> list[int]:
    """Greedy row deletion keeping column weights as even as possible.

    Each step removes the row whose columns are currently heaviest (largest
    summed column weight); ties go to the lowest row index.
    """
    H = H.astype(np.int64)
    colw = H.sum(axis=0)
    alive = np.ones(H.shape[0], dtype=bool)
    deleted: list[int] = []
    for _ in range(count):
        score = H @ colw
        score[~alive] = np.iinfo(np.int64).min
        r = int(np.argmax(score))
        deleted.append(r)
        alive[r] = False
        colw -= H[r]
    return sorted(deleted)


def build_bicycle(
    n: int,
    k: int,
    row_weight_v: int,
    seed: int,
    deletion: str = "uniform",
    max_attempts: int = 1000,
) -> CssCode:
    """MacKay bicycle code: H_o = [C | C^T] with k/2 rows removed, Hx = Hz = H_o."""
    if n % 2 or k % 2:
        raise ValueError(f"bicycle code needs even n and k, got n={n}, k={k}")
    half = n // 2
    if not 1 <= row_weight_v <= half:
        raise ValueError(f"row weight {row_weight_v} must be in [1, {half}]")
    if deletion not in ("uniform", "random"):
        raise ValueError(f"unknown deletion rule {deletion!r}")
    rng = np.random.default_rng(seed)
    for attempt in range(1, max_attempts + 1):
        v = np.zeros(half, dtype=np.uint8)
        v[rng.choice(half, size=row_weight_v, replace=False)] = 1
        C = circulant(BinVector.from_bits(v))
        Ho = hstack(C, C.T).to_dense()
        if deletion == "uniform":
            drop = uniform_deletion(Ho, k // 2)
        else:
            drop = sorted(int(i) for i in rng.choice(half, size=k // 2, replace=False))
        keep = np.setdiff1d(np.arange(half), drop)
        H = BinMatrix.from_dense(Ho[keep])
        if n - 2 * rank(H) != k:
            continue
        meta = {
            "family": "bicycle",
            "seed": seed,
            "attempts": attempt,
            "v": "".join(map(str, v)),
            "row_weight_before_deletion": int(Ho.sum(axis=1).max()),
            "deleted_rows": drop,
            "deletion": deletion,
        }
        return CssCode(H, H, name=f"bicycle_{n}_{k}", metadata=meta)
    raise CodeConstructionError(f"no bicycle code with k={k} found after {max_attempts} attempts")


def direct_sum(a: CssCode, b: CssCode) -> CssCode:
    """Two codes side by side; used for equal-density scaling comparisons."""
    return CssCode(block_diag(a.Hx, b.Hx), block_diag(a.Hz, b.Hz), name=f"{a.name}+{b.name}")


# ---------------------------------------------------------------------------
# Tanner graph


@dataclass(frozen=True)
class TannerGraph:
    """Bipartite decoding graph over the 2n binary error variables.

    Edges are sorted by (check, variable); ``edge_check[e]`` and
    ``edge_var[e]`` give the endpoints of edge ``e``.  Checks are ordered
    (rows of Hz, then rows of Hx), matching the syndrome layout (s_x | s_z).
    """

    var_count: int
    check_count: int
    edge_check: np.ndarray
    edge_var: np.ndarray

    @classmethod
    def from_matrix(cls, H: BinMatrix | np.ndarray) -> "TannerGraph":
        dense = H.to_dense() if isinstance(H, BinMatrix) else np.asarray(H, dtype=np.uint8)
        checks, variables = np.nonzero(dense)
        return cls(dense.shape[1], dense.shape[0], checks.astype(np.int64), variables.astype(np.int64))

    @property
    def edge_count(self) -> int:
        return int(self.edge_check.size)

    def check_neighbors(self) -> list[np.ndarray]:
        split = np.searchsorted(self.edge_check, np.arange(1, self.check_count))
        return np.split(self.edge_var, split)

    def var_neighbors(self) -> list[np.ndarray]:
        order = np.lexsort((self.edge_check, self.edge_var))
        split = np.searchsorted(self.edge_var[order], np.arange(1, self.var_count))
        return np.split(self.edge_check[order], split)

    def check_degrees(self) -> np.ndarray:
        return np.bincount(self.edge_check, minlength=self.check_count)

    def var_degrees(self) -> np.ndarray:
        return np.bincount(self.edge_var, minlength=self.var_count)

    def to_matrix(self) -> BinMatrix:
        dense = np.zeros((self.check_count, self.var_count), dtype=np.uint8)
        dense[self.edge_check, self.edge_var] = 1
        return BinMatrix.from_dense(dense)

    def permute_checks(self, perm: np.ndarray) -> "TannerGraph":
        """Graph whose check ``i`` is check ``perm[i]`` of this graph."""
        dense = self.to_matrix().to_dense()[np.asarray(perm)]
        return TannerGraph.from_matrix(dense)


def tanner_graph(code: CssCode) -> TannerGraph:
    return TannerGraph.from_matrix(code.decoding_matrix)
