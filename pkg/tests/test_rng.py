"""Seed derivation: stability, independence, and type handling."""

import numpy as np
import pytest

from fedsln.rng import derive_rng, derive_seed, seed_sequence


def test_derive_seed_frozen_values():
    # frozen: these anchor every downstream reproducibility test
    assert derive_seed(0) == 15793235383387715774
    assert derive_seed(1, "graph", 0) == 18098721096370197245
    assert derive_seed(1, "graph", 1) == 17640827884451256079


def test_derive_seed_is_pure():
    assert derive_seed(7, "x", 3) == derive_seed(7, "x", 3)


def test_distinct_keys_give_distinct_streams():
    seen = set()
    for seed in range(20):
        for tag in ("a", "b", "c"):
            seen.add(derive_seed(seed, tag))
    assert len(seen) == 60


def test_string_and_int_keys_do_not_collide():
    assert derive_seed(1, "2") != derive_seed(1, 2)


def test_derive_rng_reproducible():
    a = derive_rng(3, "stream").random(5)
    b = derive_rng(3, "stream").random(5)
    assert np.array_equal(a, b)


def test_derive_rng_streams_differ():
    a = derive_rng(3, "one").random(5)
    b = derive_rng(3, "two").random(5)
    assert not np.array_equal(a, b)


def test_seed_sequence_spawnable():
    ss = seed_sequence(5, "root")
    children = ss.spawn(2)
    assert len(children) == 2


def test_negative_and_large_ints_accepted():
    assert derive_seed(-1) == derive_seed(2**64 - 1)  # two's complement wrap
    assert derive_seed(2**64) == derive_seed(0)


def test_rejects_unhashable_key_types():
    with pytest.raises(TypeError):
        derive_seed(1, [1, 2])
