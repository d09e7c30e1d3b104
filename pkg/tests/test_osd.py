from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qldpc_decoders.bp import BpDecoder
from qldpc_decoders.channel import SyndromeMap, prior_llr, sample_errors
from qldpc_decoders.gf2 import BinMatrix, GF2Error, rank
from qldpc_decoders.osd import BpOsdDecoder, OsdConfig, bp_osd_decode, osd_postprocess, reliability_order, soft_weight

from oracles import min_soft_weight


def random_instance(rng, m, n, density=0.4):
    H = (rng.random((m, n)) < density).astype(np.uint8)
    e = (rng.random(n) < 0.3).astype(np.uint8)
    s = (H.astype(int) @ e) % 2
    llr = rng.normal(1.0, 2.0, n)
    return H, s.astype(np.uint8), llr


def test_config_validation():
    with pytest.raises(ValueError):
        OsdConfig(order=-1)
    with pytest.raises(ValueError):
        OsdConfig(strategy="bogus")
    with pytest.raises(ValueError):
        OsdConfig(candidate_limit=0)


def test_zero_syndrome_gives_zero(rng):
    H, _, llr = random_instance(rng, 6, 10)
    out = osd_postprocess(BinMatrix.from_dense(H), np.zeros(6, dtype=np.uint8), np.abs(llr), OsdConfig(3))
    assert not out.any()


def test_reliability_order_ties_break_by_index():
    assert reliability_order(np.array([1.0, 0.5, 1.0, 0.5])).tolist() == [1, 3, 0, 2]


def test_inconsistent_syndrome_raises():
    H = BinMatrix.from_dense(np.array([[1, 1, 0], [1, 1, 0]]))
    with pytest.raises(GF2Error):
        osd_postprocess(H, np.array([1, 0], dtype=np.uint8), np.ones(3))


@given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.integers(4, 14), st.integers(0, 3))
def test_output_satisfies_syndrome(seed, m, n, order):
    rng = np.random.default_rng(seed)
    H, s, llr = random_instance(rng, m, n)
    for strategy in ("exhaustive", "combination_sweep"):
        out = osd_postprocess(BinMatrix.from_dense(H), s, llr, OsdConfig(order, strategy=strategy))
        assert np.array_equal((H.astype(int) @ out) % 2, s)


@given(st.integers(0, 2**32 - 1))
def test_full_order_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    H, s, llr = random_instance(rng, 6, 10)
    free = 10 - rank(BinMatrix.from_dense(H))
    out = osd_postprocess(BinMatrix.from_dense(H), s, llr, OsdConfig(order=free))
    assert soft_weight(out, llr) == pytest.approx(min_soft_weight(H, s, llr), abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_order_monotonicity(seed):
    rng = np.random.default_rng(seed)
    H, s, llr = random_instance(rng, 5, 12)
    A = BinMatrix.from_dense(H)
    costs = [soft_weight(osd_postprocess(A, s, llr, OsdConfig(o)), llr) for o in range(5)]
    assert all(b <= a + 1e-12 for a, b in zip(costs, costs[1:]))


def test_candidate_limit_keeps_order_zero_as_fallback(rng):
    H, s, llr = random_instance(rng, 6, 14)
    A = BinMatrix.from_dense(H)
    o0 = soft_weight(osd_postprocess(A, s, llr, OsdConfig(0)), llr)
    capped = soft_weight(osd_postprocess(A, s, llr, OsdConfig(4, candidate_limit=3)), llr)
    full = soft_weight(osd_postprocess(A, s, llr, OsdConfig(4)), llr)
    assert full <= capped <= o0


def test_bp_osd_bypasses_when_bp_converges(hgp_code, rng):
    E = sample_errors(hgp_code, 0.01, 100, rng)
    S = SyndromeMap(hgp_code)(E)
    bp = BpDecoder.for_code(hgp_code).decode_batch(S, prior_llr(0.01))
    out = BpOsdDecoder(hgp_code, osd_config=OsdConfig(2)).decode_batch(S, prior_llr(0.01))
    assert np.array_equal(out[bp.converged], bp.e_hat[bp.converged])
    assert np.array_equal(SyndromeMap(hgp_code)(out), S)


def test_bp_osd_single_decode(hgp_code, rng):
    e = sample_errors(hgp_code, 0.05, 1, rng)[0]
    s = SyndromeMap(hgp_code)(e)[0]
    out = bp_osd_decode(hgp_code, s, prior_llr(0.05), osd_config=OsdConfig(1))
    assert np.array_equal(SyndromeMap(hgp_code)(out)[0], s)
