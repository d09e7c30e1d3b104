from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qldpc_decoders.codes import CssCode, build_bicycle, build_hgp_bch
from qldpc_decoders.gf2 import BinMatrix

settings.register_profile("repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

HAMMING_7 = np.array(
    [
        [1, 0, 1, 0, 1, 0, 1],
        [0, 1, 1, 0, 0, 1, 1],
        [0, 0, 0, 1, 1, 1, 1],
    ],
    dtype=np.uint8,
)


@pytest.fixture(scope="session")
def hgp_code() -> CssCode:
    return build_hgp_bch()


@pytest.fixture(scope="session")
def bicycle_code() -> CssCode:
    return build_bicycle(256, 32, 8, seed=7)


@pytest.fixture(scope="session")
def steane_code() -> CssCode:
    H = BinMatrix.from_dense(HAMMING_7)
    return CssCode(H, H, name="steane")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
