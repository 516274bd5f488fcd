"""The generator is part of the reproducibility contract: these constants
must never change, or previously published samples stop being recoverable."""

import pytest
from hypothesis import given, strategies as st

from fewner.rng import SplitMix64, pick_first_k, shuffled, stable_seed, unit_uniform

# Reference outputs of splitmix64 for seed 1234567, as published with the
# original algorithm; matching them proves the constants and masking agree
# with everyone else's implementation.
SPLITMIX64_SEED_1234567 = [
    6457827717110365317,
    3203168211198807973,
    9817491932198370423,
    4593380528125082431,
    16408922859458223821,
]


def test_splitmix64_reference_vectors():
    gen = SplitMix64(1234567)
    assert [gen.next_u64() for _ in range(5)] == SPLITMIX64_SEED_1234567


def test_splitmix64_seed_wraps_to_64_bits():
    assert SplitMix64(2**64 + 5).next_u64() == SplitMix64(5).next_u64()


def test_randrange_rejects_nonpositive():
    with pytest.raises(ValueError):
        SplitMix64(0).randrange(0)


def test_stable_seed_regression():
    # Frozen: changing the hash recipe would silently re-deal every sample.
    assert stable_seed("a", 1) == 9484037261928657086
    assert stable_seed() == 16406829232824261652
    assert stable_seed("a", 1) != stable_seed("a1")
    assert stable_seed("a", 1) != stable_seed(1, "a")


def test_unit_uniform_range_and_regression():
    assert unit_uniform("a", 1) == pytest.approx(0.5141306901658262)
    for i in range(200):
        assert 0.0 <= unit_uniform("u", i) < 1.0


def test_shuffled_regression():
    assert shuffled(list(range(10)), 42) == [3, 2, 4, 5, 8, 7, 0, 9, 6, 1]


@given(st.lists(st.integers(), max_size=40), st.integers(min_value=0, max_value=2**64 - 1))
def test_shuffled_is_a_permutation(items, seed):
    out = shuffled(items, seed)
    assert sorted(out) == sorted(items)
    assert shuffled(items, seed) == out  # pure


@given(
    st.lists(st.integers(), min_size=1, max_size=40),
    st.integers(min_value=0, max_value=2**64 - 1),
    st.data(),
)
def test_pick_first_k_is_shuffle_prefix(items, seed, data):
    k = data.draw(st.integers(min_value=0, max_value=len(items)))
    assert pick_first_k(items, k, seed) == shuffled(items, seed)[:k]


def test_pick_first_k_rejects_bad_k():
    with pytest.raises(ValueError):
        pick_first_k([1, 2], -1, 0)
    with pytest.raises(ValueError):
        pick_first_k([1, 2], 3, 0)
