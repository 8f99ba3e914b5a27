import hashlib

import numpy as np
from hypothesis import given, strategies as st

from timescaling.seeding import derive_seed, make_rng, stream


def test_derive_seed_matches_documented_hash():
    want = int.from_bytes(hashlib.sha256(b"7:data:3").digest()[:8], "big")
    assert derive_seed(7, "data", 3) == want


def test_streams_differ_by_role_and_index():
    a = stream(0, "data").standard_normal(4)
    b = stream(0, "eval").standard_normal(4)
    c = stream(0, "data", 1).standard_normal(4)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


@given(st.integers(min_value=0, max_value=2**63))
def test_make_rng_is_reproducible(seed):
    assert np.array_equal(make_rng(seed).standard_normal(5), make_rng(seed).standard_normal(5))
