"""Paired binary symmetric channels, syndromes and training/test datasets.

Errors are 2n-bit vectors laid out as (x_1..x_n | z_1..z_n); syndromes are
(s_x | s_z) = (Hz x, Hx z).  Batched helpers work on dense uint8 arrays of
shape (batch, bits); the single-vector helpers use packed ``BinVector``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.stats import binom

from .codes import CssCode
from .gf2 import BinVector, GF2Error, mat_vec


@dataclass(frozen=True)
class ChannelParams:
    p_f: float

    def __post_init__(self):
        if not 0.0 <= self.p_f < 0.5:
            raise ValueError(f"p_f must lie in [0, 0.5), got {self.p_f}")


def prior_llr(params: ChannelParams | float) -> float:
    p = params.p_f if isinstance(params, ChannelParams) else float(params)
    if not 0.0 < p < 0.5:
        raise ValueError(f"prior LLR needs 0 < p_f < 0.5, got {p}")
    return float(np.log((1.0 - p) / p))


def sample_error(code: CssCode, params: ChannelParams, rng: np.random.Generator) -> BinVector:
    return BinVector.from_bits(rng.random(2 * code.n) < params.p_f)


def sample_errors(code: CssCode, p_f: float, count: int, rng: np.random.Generator) -> np.ndarray:
    return (rng.random((count, 2 * code.n)) < p_f).astype(np.uint8)


def syndrome(code: CssCode, e: BinVector) -> BinVector:
    if e.len != 2 * code.n:
        raise GF2Error(f"error length {e.len} != 2n = {2 * code.n}")
    bits = e.to_bits()
    sx = mat_vec(code.Hz, BinVector.from_bits(bits[: code.n]))
    sz = mat_vec(code.Hx, BinVector.from_bits(bits[code.n :]))
    return BinVector.from_bits(np.concatenate([sx.to_bits(), sz.to_bits()]))


class SyndromeMap:
    """Dense batched syndrome computation for one code."""

    def __init__(self, code: CssCode):
        self.n = code.n
        self.Hz = code.Hz.to_dense().astype(np.int64)
        self.Hx = code.Hx.to_dense().astype(np.int64)

    def __call__(self, errors: np.ndarray) -> np.ndarray:
        e = np.atleast_2d(np.asarray(errors, dtype=np.int64))
        if e.shape[1] != 2 * self.n:
            raise GF2Error(f"error width {e.shape[1]} != 2n = {2 * self.n}")
        sx = (e[:, : self.n] @ self.Hz.T) & 1
        sz = (e[:, self.n :] @ self.Hx.T) & 1
        return np.hstack([sx, sz]).astype(np.uint8)


def truncated_weight_distribution(bits: int, p_f: float, min_weight: int = 2) -> np.ndarray:
    """Binomial(bits, p_f) restricted to w >= min_weight and renormalised."""
    w = np.arange(bits + 1)
    pmf = binom.pmf(w, bits, p_f)
    pmf[:min_weight] = 0.0
    total = pmf.sum()
    if total <= 0:
        raise ValueError(f"no probability mass at weight >= {min_weight} for p_f={p_f}")
    return pmf / total


@dataclass
class Dataset:
    code_name: str
    code_hash: str
    syndromes: np.ndarray
    errors: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.errors.shape[0])

    def verify(self, code: CssCode) -> None:
        if code.digest() != self.code_hash:
            raise ValueError(f"dataset was generated for code {self.code_hash}, not {code.digest()}")
        if not np.array_equal(SyndromeMap(code)(self.errors), self.syndromes):
            raise ValueError("dataset entry with inconsistent syndrome")

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for line in _jsonl_lines(self.code_name, self.code_hash, self.metadata, zip(self.syndromes, self.errors)):
                fh.write(line)

    @classmethod
    def load(cls, path: str | Path, code: CssCode | None = None) -> "Dataset":
        with open(path) as fh:
            header = json.loads(fh.readline())
            m, width = header["m"], header["bits"]
            syn, err = [], []
            for line in fh:
                rec = json.loads(line)
                syn.append(_from_hex(rec["s"], m))
                err.append(_from_hex(rec["e"], width))
        ds = cls(
            header["code"],
            header["code_hash"],
            np.array(syn, dtype=np.uint8).reshape(-1, m),
            np.array(err, dtype=np.uint8).reshape(-1, width),
            {k: v for k, v in header.items() if k not in ("code", "code_hash", "m", "bits", "format")},
        )
        if code is not None:
            ds.verify(code)
        return ds


def _to_hex(bits: np.ndarray) -> str:
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes().hex()


def _from_hex(text: str, length: int) -> np.ndarray:
    raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:length]


def _jsonl_lines(code_name, code_hash, metadata, pairs) -> Iterator[str]:
    pairs = iter(pairs)
    first = next(pairs, None)
    m = 0 if first is None else len(first[0])
    bits = 0 if first is None else len(first[1])
    header = {"format": "qldpc-dataset/1", "code": code_name, "code_hash": code_hash, "m": m, "bits": bits}
    header.update(metadata)
    yield json.dumps(header) + "\n"
    if first is None:
        return
    for s, e in itertools.chain([first], pairs):
        yield json.dumps({"s": _to_hex(s), "e": _to_hex(e)}) + "\n"


def gen_training_set(code: CssCode, params: ChannelParams, count: int, rng: np.random.Generator) -> Dataset:
    """Balanced training set: the zero error, all 2n unit errors, then weight >= 2 draws.

    Tail weights follow Binomial(2n, p_f) truncated to w >= 2; the ones are
    placed uniformly without replacement.
    """
    bits = 2 * code.n
    if count < bits + 1:
        raise ValueError(f"training set needs at least 2n+1 = {bits + 1} entries, got {count}")
    errors = np.zeros((count, bits), dtype=np.uint8)
    errors[1 : bits + 1] = np.eye(bits, dtype=np.uint8)
    tail = count - bits - 1
    if tail:
        weights = rng.choice(bits + 1, size=tail, p=truncated_weight_distribution(bits, params.p_f))
        for row, w in enumerate(weights, start=bits + 1):
            errors[row, rng.choice(bits, size=int(w), replace=False)] = 1
    return Dataset(
        code.name,
        code.digest(),
        SyndromeMap(code)(errors),
        errors,
        {"p_f": params.p_f, "recipe": "train", "count": count},
    )


def gen_test_stream(
    code: CssCode, params: ChannelParams, count: int, rng: np.random.Generator, chunk: int = 1024
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Lazily yield ``count`` iid (syndrome, error) pairs."""
    smap = SyndromeMap(code)
    left = count
    while left > 0:
        b = min(chunk, left)
        errors = sample_errors(code, params.p_f, b, rng)
        synd = smap(errors)
        for s, e in zip(synd, errors):
            yield s, e
        left -= b


def write_test_stream(path, code: CssCode, params: ChannelParams, count: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    meta = {"p_f": params.p_f, "recipe": "test", "count": count, "seed": seed}
    with open(path, "w") as fh:
        for line in _jsonl_lines(code.name, code.digest(), meta, gen_test_stream(code, params, count, rng)):
            fh.write(line)
