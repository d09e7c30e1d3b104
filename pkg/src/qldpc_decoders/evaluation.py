"""Logical-success judging and Monte Carlo logical-error-rate sweeps."""

from __future__ import annotations

import csv
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy.stats import norm

from .channel import SyndromeMap, prior_llr
from .codes import CssCode
from .gf2 import BinVector, RowspaceTester

CHUNK_TRIALS = 500  # fixed partition size; results never depend on worker count


class LogicalJudge:
    """Decides whether a residual error e + e_hat acts trivially on the code space.

    For a CSS code the residual is harmless iff it has zero syndrome and its
    X part lies in rowspace(Hx) and its Z part in rowspace(Hz).
    """

    def __init__(self, code: CssCode):
        self.n = code.n
        self.syndrome = SyndromeMap(code)
        self.x_stabilizers = RowspaceTester(code.Hx)
        self.z_stabilizers = RowspaceTester(code.Hz)

    def success_batch(self, errors: np.ndarray, e_hat: np.ndarray) -> np.ndarray:
        e = np.atleast_2d(np.asarray(errors, dtype=np.uint8))
        f = np.atleast_2d(np.asarray(e_hat, dtype=np.uint8))
        if e.shape != f.shape or e.shape[1] != 2 * self.n:
            raise ValueError(f"error shapes {e.shape} and {f.shape} do not match 2n = {2 * self.n}")
        tot = e ^ f
        ok = ~self.syndrome(tot).any(axis=1)
        if ok.any():
            idx = np.flatnonzero(ok)
            ok[idx] = self.x_stabilizers(tot[idx, : self.n]) & self.z_stabilizers(tot[idx, self.n :])
        return ok


def _bits(v) -> np.ndarray:
    return v.to_bits() if isinstance(v, BinVector) else np.asarray(v, dtype=np.uint8)


def is_logical_success(judge: LogicalJudge, e, e_hat) -> bool:
    a, b = _bits(e), _bits(e_hat)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    return bool(judge.success_batch(a[None, :], b[None, :])[0])


def wilson_interval(failures: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials < 1 or not 0 <= failures <= trials:
        raise ValueError(f"need 0 <= failures <= trials and trials >= 1, got {failures}/{trials}")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    z = float(norm.ppf(0.5 + confidence / 2.0))
    p = failures / trials
    den = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / den
    half = z * np.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / den
    low = 0.0 if failures == 0 else max(0.0, centre - half)
    high = 1.0 if failures == trials else min(1.0, centre + half)
    return float(low), float(high)


@dataclass(frozen=True)
class CurvePoint:
    p_f: float
    trials: int
    failures: int
    ler: float
    ci_low: float
    ci_high: float
    seconds: float = 0.0

    @classmethod
    def from_counts(cls, p_f: float, trials: int, failures: int, seconds: float = 0.0) -> "CurvePoint":
        lo, hi = wilson_interval(failures, trials)
        return cls(p_f, trials, failures, failures / trials, lo, hi, seconds)


# ---------------------------------------------------------------------------
# decoders as batch functions  syndromes (B, m) -> e_hat (B, 2n)


class ZeroDecoder:
    """Always guesses no error; useful as a baseline."""

    def __init__(self, code: CssCode):
        self.bits = 2 * code.n

    def decode_batch(self, syndromes, prior=None) -> np.ndarray:
        return np.zeros((np.atleast_2d(syndromes).shape[0], self.bits), dtype=np.uint8)


def hard_decisions(result) -> np.ndarray:
    return np.asarray(getattr(result, "e_hat", result), dtype=np.uint8)


def _p_key(p_f: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", float(p_f)))[0]


def trial_errors(code: CssCode, p_f: float, seed: int, start: int, stop: int) -> np.ndarray:
    """Errors for trials start..stop-1, each drawn from its own substream."""
    key = _p_key(p_f)
    out = np.empty((stop - start, 2 * code.n), dtype=np.uint8)
    for j, t in enumerate(range(start, stop)):
        rng = np.random.default_rng([seed, key, t])
        out[j] = rng.random(2 * code.n) < p_f
    return out


class _ChunkRunner:
    def __init__(self, code: CssCode, decoder, seed: int):
        self.code = code
        self.decoder = decoder
        self.seed = seed
        self.judge = LogicalJudge(code)
        self.syndrome = SyndromeMap(code)

    def __call__(self, job: tuple[float, int, int]) -> int:
        p_f, start, stop = job
        errors = trial_errors(self.code, p_f, self.seed, start, stop)
        prior = prior_llr(p_f) if p_f > 0 else prior_llr(1e-12)
        e_hat = hard_decisions(self.decoder.decode_batch(self.syndrome(errors), prior))
        return int((~self.judge.success_batch(errors, e_hat)).sum())


_worker_runner: _ChunkRunner | None = None


def _worker_init(runner: _ChunkRunner) -> None:
    global _worker_runner
    _worker_runner = runner


def _worker_job(job) -> int:
    return _worker_runner(job)


def default_workers() -> int:
    return max(1, int(os.environ.get("QLDPC_WORKERS", "1")))


def run_sweep(
    code: CssCode,
    decoder,
    p_list: Iterable[float],
    trials: int,
    seed: int,
    workers: int | None = None,
    stop_after_failures: int | None = None,
    progress: Callable[[CurvePoint], None] | None = None,
) -> list[CurvePoint]:
    """Logical error rate per physical error rate.

    ``decoder`` needs ``decode_batch(syndromes, prior)``.  Trials are cut into
    fixed chunks of ``CHUNK_TRIALS`` and trial t always uses substream
    (seed, p_f, t), so counts do not depend on ``workers``.  With
    ``stop_after_failures`` a point ends at the first chunk boundary where the
    failure tally reaches the limit.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    workers = workers or default_workers()
    runner = _ChunkRunner(code, decoder, seed)
    pool = ProcessPoolExecutor(workers, initializer=_worker_init, initargs=(runner,)) if workers > 1 else None
    points = []
    try:
        for p_f in p_list:
            if not 0.0 <= p_f < 0.5:
                raise ValueError(f"p_f must lie in [0, 0.5), got {p_f}")
            jobs = [(p_f, a, min(a + CHUNK_TRIALS, trials)) for a in range(0, trials, CHUNK_TRIALS)]
            t0 = time.perf_counter()
            done_trials = failures = 0
            step = workers if pool else 1
            for i in range(0, len(jobs), step):
                batch = jobs[i : i + step]
                counts = list(pool.map(_worker_job, batch)) if pool else [runner(batch[0])]
                stop = False
                for job, c in zip(batch, counts):
                    done_trials += job[2] - job[1]
                    failures += c
                    if stop_after_failures is not None and failures >= stop_after_failures:
                        stop = True
                        break
                if stop:
                    break
            point = CurvePoint.from_counts(p_f, done_trials, failures, time.perf_counter() - t0)
            points.append(point)
            if progress:
                progress(point)
    finally:
        if pool:
            pool.shutdown()
    return points


def write_curve_xy(points: list[CurvePoint], path: str | Path, label: str = "ler") -> None:
    with open(path, "w") as fh:
        fh.write(f"# p_f {label}\n")
        for p in points:
            fh.write(f"{p.p_f!r} {p.ler!r}\n")


def write_curve_csv(points: list[CurvePoint], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p_f", "trials", "failures", "ler", "ci_low", "ci_high", "seconds"])
        for p in points:
            w.writerow([p.p_f, p.trials, p.failures, p.ler, p.ci_low, p.ci_high, f"{p.seconds:.3f}"])


def read_curve_xy(path: str | Path) -> np.ndarray:
    return np.loadtxt(path, comments="#", ndmin=2)
