import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cbid.bloom import (
    BloomFilter,
    MultiSectionBloomFilter,
    expected_fp,
    filter_from_bytes,
    fp_capacity,
)
from cbid.hashing import hash_elements

from . import oracles


# values computed with the plain-float oracle and frozen here
@pytest.mark.parametrize(
    "m,n,k,want",
    [
        (2**15, 1000, 4, 0.00017438722622326643),
        (2**15, 3277, 1, 0.09516948541171599),
        (2**16, 16384, 2, 0.15481994253087963),
        (1024, 100, 3, 0.01639893722211408),
    ],
)
def test_expected_fp_frozen(m, n, k, want):
    assert expected_fp(m, n, k) == pytest.approx(want, rel=1e-9)


@given(st.integers(1, 10**7), st.integers(0, 10**6), st.integers(1, 12))
def test_expected_fp_matches_oracle(m, n, k):
    assert expected_fp(m, n, k) == pytest.approx(oracles.bloom_fp(m, n, k), rel=1e-6, abs=1e-12)


def test_expected_fp_large_filter():
    # (1 - e^-0.5)^5 by hand; the finite-m form differs in the sixth digit
    assert expected_fp(10**6, 10**5, 5) == pytest.approx(0.0094309, rel=1e-4)


def test_expected_fp_large_filter_simulated(rng):
    bf = BloomFilter(10**6, 5, seed=3)
    bf.insert_hashes(hash_elements(_members(rng, 10**5), bf.element_seeds))
    probes = hash_elements([b"\xff" + rng.bytes(24) for _ in range(100_000)], bf.element_seeds)
    assert bf.query_hashes(probes).mean() == pytest.approx(0.0094309, rel=0.2)


def test_expected_fp_edges():
    assert expected_fp(10, 0, 3) == 0.0
    with pytest.raises(ValueError):
        expected_fp(0, 1, 1)
    with pytest.raises(ValueError):
        expected_fp(10, 1, 0)
    with pytest.raises(ValueError):
        expected_fp(10, -1, 1)


def test_expected_fp_monotone_in_n():
    vals = [expected_fp(4096, n, 4) for n in range(0, 5000, 250)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_fp_capacity_is_smallest_crossing():
    n = fp_capacity(2**15, 4, 0.01)
    assert expected_fp(2**15, n, 4) >= 0.01
    assert expected_fp(2**15, n - 1, 4) < 0.01


def _members(rng, n):
    return [rng.bytes(24) for _ in range(n)]


def test_no_false_negatives(rng):
    bf = BloomFilter(4096, 3, seed=5)
    items = _members(rng, 600)
    for x in items:
        bf.insert(x)
    assert all(x in bf for x in items)
    assert bf.inserted_n == 600


@given(st.lists(st.binary(min_size=1, max_size=40), min_size=1, max_size=50), st.integers(0, 2**32))
def test_msbf_no_false_negatives_and_stable_section(items, seed):
    f = MultiSectionBloomFilter(64 * 16, 16, 4, seed=seed)
    sections = [f.insert(x) for x in items]
    for x, s in zip(items, sections):
        assert f.query(x) == s == f.section_of(x)


def test_empirical_fp_tracks_formula(rng):
    m, k, n = 2**15, 4, 1000
    bf = BloomFilter(m, k, seed=1)
    bf.insert_hashes(hash_elements(_members(rng, n), bf.element_seeds))
    probes = hash_elements([b"\xff" + rng.bytes(24) for _ in range(200_000)], bf.element_seeds)
    rate = bf.query_hashes(probes).mean()
    assert rate == pytest.approx(expected_fp(m, n, k), rel=0.35)


def test_msbf_sections_are_whole_bytes():
    f = MultiSectionBloomFilter(10_000, 7, 4)
    assert f.section_bits % 8 == 0
    assert f.m == 7 * f.section_bits <= 10_000
    with pytest.raises(ValueError):
        MultiSectionBloomFilter(100, 4)


def test_msbf_section_load_counts(rng):
    f = MultiSectionBloomFilter(64 * 8, 8, 2)
    secs = [f.insert(x) for x in _members(rng, 100)]
    assert f.section_n.tolist() == np.bincount(secs, minlength=8).tolist()
    assert f.expected_fp() == pytest.approx(expected_fp(64, int(f.section_n.max()), 2))


def test_serialization_round_trip(rng):
    bf = BloomFilter(1000, 3, seed=9)
    ms = MultiSectionBloomFilter(64 * 32, 32, 4, seed=9)
    for x in _members(rng, 80):
        bf.insert(x)
        ms.insert(x)
    assert filter_from_bytes(bf.to_bytes()) == bf
    assert filter_from_bytes(ms.to_bytes()) == ms
    with pytest.raises(ValueError):
        filter_from_bytes(b"\x09rest")
    with pytest.raises(ValueError):
        filter_from_bytes(b"")


def test_seeds_change_positions():
    a, b = BloomFilter(512, 3, seed=1), BloomFilter(512, 3, seed=2)
    a.insert(b"x")
    b.insert(b"x")
    assert not np.array_equal(a.bits, b.bits)
