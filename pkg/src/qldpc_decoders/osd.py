"""Ordered-statistics post-processing of BP soft output."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .bp import BpConfig, BpDecoder
from .codes import CssCode
from .gf2 import BinMatrix, BinVector, GF2Error, _eliminate

STRATEGIES = ("exhaustive", "combination_sweep")


@dataclass(frozen=True)
class OsdConfig:
    """OSD order and candidate search.

    ``exhaustive`` tries every flip pattern of weight <= order on the free
    coordinates, in increasing weight then lexicographic order over the
    reliability ranking, stopping after ``candidate_limit`` patterns.
    ``combination_sweep`` tries all weight-1 patterns plus weight-2 patterns
    among the ``order`` least reliable free coordinates.
    """

    order: int = 0
    candidate_limit: int | None = None
    strategy: str = "exhaustive"

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("OSD order must be >= 0")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown OSD strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.candidate_limit is not None and self.candidate_limit < 1:
            raise ValueError("candidate_limit must be positive")


def soft_weight(e: np.ndarray, llr: np.ndarray) -> float:
    return float(np.asarray(llr, dtype=float)[np.asarray(e, dtype=bool)].sum())


def reliability_order(llr: np.ndarray) -> np.ndarray:
    """Columns sorted by ascending posterior LLR (most likely flipped first); ties by index."""
    return np.lexsort((np.arange(len(llr)), np.asarray(llr, dtype=float)))


def _patterns(n_free: int, config: OsdConfig):
    """Yield index tuples (positions within the free list), excluding the empty pattern."""
    limit = config.candidate_limit
    produced = 0
    if config.strategy == "combination_sweep":
        gen = itertools.chain(
            ((i,) for i in range(n_free)),
            itertools.combinations(range(min(config.order, n_free)), 2),
        ) if config.order > 0 else iter(())
    else:
        gen = itertools.chain.from_iterable(
            itertools.combinations(range(n_free), w) for w in range(1, min(config.order, n_free) + 1)
        )
    for pat in gen:
        if limit is not None and produced >= limit:
            return
        produced += 1
        yield pat


def osd_postprocess(H: BinMatrix, s, posterior_llr, config: OsdConfig = OsdConfig()) -> np.ndarray:
    """Syndrome-consistent error estimate minimising soft weight over the OSD search set."""
    s_bits = s.to_bits() if isinstance(s, BinVector) else np.asarray(s, dtype=np.uint8)
    llr = np.asarray(posterior_llr, dtype=float)
    m, n = H.shape
    if s_bits.size != m or llr.size != n:
        raise GF2Error(f"OSD: H is {m}x{n} but got syndrome {s_bits.size} and {llr.size} LLRs")

    order = reliability_order(llr)
    aug = np.zeros((m, n + 1), dtype=np.uint8)
    aug[:, :n] = H.to_dense()
    aug[:, n] = s_bits
    words = BinMatrix.from_dense(aug).data.copy()
    pivots = _eliminate(words, order)
    r = len(pivots)
    reduced = BinMatrix(m, n + 1, words).to_dense()
    if reduced[r:, n].any():
        raise GF2Error("OSD: syndrome is inconsistent with the check matrix")

    pivots = np.asarray(pivots, dtype=int)
    pivot_set = np.zeros(n, dtype=bool)
    pivot_set[pivots] = True
    free = order[~pivot_set[order]]  # free columns in reliability order
    base = reduced[:r, n].astype(np.int64)

    best = np.zeros(n, dtype=np.uint8)
    best[pivots] = base
    if config.order == 0 or free.size == 0:
        return best
    best_cost = float(llr[pivots] @ base)

    R_free = reduced[:r, free].astype(np.int64)  # (r, F)
    llr_piv, llr_free = llr[pivots], llr[free]
    pats = _patterns(free.size, config)
    while block := list(itertools.islice(pats, 4096)):
        ind = np.zeros((len(block), free.size), dtype=np.int64)
        for row, pat in enumerate(block):
            ind[row, list(pat)] = 1
        x_piv = (base[None, :] + ind @ R_free.T) & 1
        cost = x_piv @ llr_piv + ind @ llr_free
        j = int(np.argmin(cost))
        if cost[j] < best_cost:
            best_cost = float(cost[j])
            best = np.zeros(n, dtype=np.uint8)
            best[pivots] = x_piv[j]
            best[free] = ind[j]
    return best


class BpOsdDecoder:
    """BP followed by OSD on each block whenever BP fails to converge."""

    def __init__(self, code: CssCode, bp_config: BpConfig = BpConfig(), osd_config: OsdConfig = OsdConfig()):
        self.code = code
        self.bp = BpDecoder.for_code(code, bp_config)
        self.osd_config = osd_config

    def decode_batch(self, syndromes: np.ndarray, prior) -> np.ndarray:
        S = np.atleast_2d(np.asarray(syndromes, dtype=np.uint8))
        res = self.bp.decode_batch(S, prior)
        out = res.e_hat.copy()
        for i in np.flatnonzero(~res.converged):
            out[i] = self._postprocess(S[i], res.posterior_llr[i])
        return out

    def decode(self, s, prior) -> np.ndarray:
        bits = s.to_bits() if isinstance(s, BinVector) else np.asarray(s, dtype=np.uint8)
        return self.decode_batch(bits[None, :], prior)[0]

    def _postprocess(self, s: np.ndarray, llr: np.ndarray) -> np.ndarray:
        n, mz = self.code.n, self.code.Hz.rows
        x = osd_postprocess(self.code.Hz, s[:mz], llr[:n], self.osd_config)
        z = osd_postprocess(self.code.Hx, s[mz:], llr[n:], self.osd_config)
        return np.concatenate([x, z])


def bp_osd_decode(code: CssCode, s, prior, bp_config: BpConfig = BpConfig(), osd_config: OsdConfig = OsdConfig()):
    return BpOsdDecoder(code, bp_config, osd_config).decode(s, prior)
