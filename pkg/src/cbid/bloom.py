"""Conventional and multi-section Bloom filters.

Both filters take k indices per element by double hashing,
``(h_a + i * h_b) mod bits``, from two keyed 64-bit element hashes. The
multi-section filter draws a third, independently keyed hash to choose the
section; the k indices then land inside that section only.

Bits live in a ``numpy.bool_`` array while digesting (cheap vectorized
set/test) and are packed little-endian for storage.
"""

from __future__ import annotations

import struct
from typing import Optional

import numpy as np

from .hashing import derive_seed, hash_elements

_SEED_A, _SEED_B, _SEED_SECTION = 1, 2, 3


def expected_fp(m: int, n: int, k: int) -> float:
    """False-positive probability ``(1 - (1 - 1/m)^(k n))^k``."""
    if m < 1 or k < 1 or n < 0:
        raise ValueError("need m >= 1, k >= 1, n >= 0")
    if n == 0:
        return 0.0
    # log1p keeps (1 - 1/m)^(kn) accurate for large m
    miss = np.exp(k * n * np.log1p(-1.0 / m)) if m > 1 else 0.0
    return float((1.0 - miss) ** k)


def fp_capacity(m: int, k: int, target: float) -> int:
    """Smallest n with ``expected_fp(m, n, k) >= target``."""
    lo, hi = 0, 1
    while expected_fp(m, hi, k) < target:
        hi *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if expected_fp(m, mid, k) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def _indices(ha: np.ndarray, hb: np.ndarray, k: int, bits: int) -> np.ndarray:
    hb = hb | np.uint64(1)
    steps = np.arange(k, dtype=np.uint64)
    return (ha[:, None] + steps[None, :] * hb[:, None]) % np.uint64(bits)


class BloomFilter:
    """m-bit array with k hash functions."""

    kind = 0

    def __init__(self, m: int, k: int = 4, seed: int = 0):
        if m < 1 or k < 1:
            raise ValueError("BloomFilter needs m >= 1 and k >= 1")
        self.m = int(m)
        self.k = int(k)
        self.seed = int(seed)
        self.bits = np.zeros(self.m, dtype=bool)
        self.inserted_n = 0
        self._seeds = (derive_seed(self.seed, _SEED_A), derive_seed(self.seed, _SEED_B))

    @property
    def element_seeds(self) -> tuple[int, ...]:
        return self._seeds

    @property
    def nbytes(self) -> int:
        return (self.m + 7) // 8

    def popcount(self) -> int:
        return int(np.count_nonzero(self.bits))

    def insert_hashes(self, hashes: np.ndarray) -> None:
        """Insert pre-hashed elements; ``hashes`` is ``(n, 2)`` from :attr:`element_seeds`."""
        if hashes.shape[0] == 0:
            return
        idx = _indices(hashes[:, 0], hashes[:, 1], self.k, self.m)
        self.bits[idx.ravel()] = True
        self.inserted_n += hashes.shape[0]

    def query_hashes(self, hashes: np.ndarray) -> np.ndarray:
        if hashes.shape[0] == 0:
            return np.zeros(0, dtype=bool)
        idx = _indices(hashes[:, 0], hashes[:, 1], self.k, self.m)
        return self.bits[idx].all(axis=1)

    def insert(self, element: bytes) -> None:
        self.insert_hashes(hash_elements([element], self._seeds))

    def query(self, element: bytes) -> bool:
        return bool(self.query_hashes(hash_elements([element], self._seeds))[0])

    __contains__ = query

    def expected_fp(self) -> float:
        return expected_fp(self.m, self.inserted_n, self.k)

    def to_bytes(self) -> bytes:
        head = struct.pack("<BQIQQ", self.kind, self.m, self.k, self.seed, self.inserted_n)
        return head + np.packbits(self.bits, bitorder="little").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "BloomFilter":
        kind, m, k, seed, n = struct.unpack_from("<BQIQQ", data)
        if kind != cls.kind:
            raise ValueError("not a conventional Bloom filter")
        f = cls(m, k, seed)
        off = struct.calcsize("<BQIQQ")
        raw = np.frombuffer(data, dtype=np.uint8, count=(m + 7) // 8, offset=off)
        f.bits = np.unpackbits(raw, bitorder="little", count=m).astype(bool)
        f.inserted_n = n
        return f

    def __eq__(self, other) -> bool:
        return (
            type(other) is type(self)
            and (self.m, self.k, self.seed, self.inserted_n) == (other.m, other.k, other.seed, other.inserted_n)
            and np.array_equal(self.bits, other.bits)
        )


class MultiSectionBloomFilter:
    """j equal sub-filters sharing one bit budget, plus a section-choosing hash.

    Each section holds ``(m // j)`` bits rounded down to a whole byte;
    the remainder of ``m`` is left unused.
    """

    kind = 1

    def __init__(self, m: int, j: int, k: int = 4, seed: int = 0, section_seed: Optional[int] = None):
        if j < 1 or k < 1:
            raise ValueError("MultiSectionBloomFilter needs j >= 1 and k >= 1")
        if int(m) // j < 64:
            raise ValueError(f"m={m} too small for {j} sections of at least 64 bits")
        section_bits = (int(m) // j) // 8 * 8
        self.j = int(j)
        self.k = int(k)
        self.seed = int(seed)
        self.section_seed = derive_seed(self.seed, _SEED_SECTION) if section_seed is None else int(section_seed)
        self.section_bits = section_bits
        self.bits = np.zeros(self.j * section_bits, dtype=bool)
        self.section_n = np.zeros(self.j, dtype=np.int64)
        self._seeds = (
            derive_seed(self.seed, _SEED_A),
            derive_seed(self.seed, _SEED_B),
            self.section_seed,
        )

    @property
    def m(self) -> int:
        return self.j * self.section_bits

    @property
    def inserted_n(self) -> int:
        return int(self.section_n.sum())

    @property
    def element_seeds(self) -> tuple[int, ...]:
        return self._seeds

    @property
    def nbytes(self) -> int:
        return self.m // 8

    def popcount(self) -> int:
        return int(np.count_nonzero(self.bits))

    def sections_of_hashes(self, hashes: np.ndarray) -> np.ndarray:
        return (hashes[:, 2] % np.uint64(self.j)).astype(np.int64)

    def _flat_indices(self, hashes: np.ndarray, sections: np.ndarray) -> np.ndarray:
        local = _indices(hashes[:, 0], hashes[:, 1], self.k, self.section_bits).astype(np.int64)
        return local + (sections * self.section_bits)[:, None]

    def insert_hashes(self, hashes: np.ndarray) -> np.ndarray:
        """Insert pre-hashed elements (``(n, 3)``); returns their sections."""
        if hashes.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        sections = self.sections_of_hashes(hashes)
        self.bits[self._flat_indices(hashes, sections).ravel()] = True
        self.section_n += np.bincount(sections, minlength=self.j)
        return sections

    def query_hashes(self, hashes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Membership and section of each pre-hashed element."""
        if hashes.shape[0] == 0:
            return np.zeros(0, dtype=bool), np.zeros(0, dtype=np.int64)
        sections = self.sections_of_hashes(hashes)
        found = self.bits[self._flat_indices(hashes, sections)].all(axis=1)
        return found, sections

    def section_of(self, element: bytes) -> int:
        return int(self.sections_of_hashes(hash_elements([element], self._seeds))[0])

    def insert(self, element: bytes) -> int:
        return int(self.insert_hashes(hash_elements([element], self._seeds))[0])

    def query(self, element: bytes) -> Optional[int]:
        found, sections = self.query_hashes(hash_elements([element], self._seeds))
        return int(sections[0]) if found[0] else None

    def __contains__(self, element: bytes) -> bool:
        return self.query(element) is not None

    def expected_fp(self) -> float:
        """Worst section's false-positive estimate."""
        return expected_fp(self.section_bits, int(self.section_n.max()), self.k)

    def to_bytes(self) -> bytes:
        head = struct.pack("<BIIQQQ", self.kind, self.j, self.k, self.section_bits, self.seed, self.section_seed)
        return (
            head
            + self.section_n.astype("<i8").tobytes()
            + np.packbits(self.bits, bitorder="little").tobytes()
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "MultiSectionBloomFilter":
        kind, j, k, section_bits, seed, section_seed = struct.unpack_from("<BIIQQQ", data)
        if kind != cls.kind:
            raise ValueError("not a multi-section Bloom filter")
        f = cls(j * section_bits, j, k, seed, section_seed)
        off = struct.calcsize("<BIIQQQ")
        f.section_n = np.frombuffer(data, dtype="<i8", count=j, offset=off).astype(np.int64)
        off += 8 * j
        raw = np.frombuffer(data, dtype=np.uint8, count=f.m // 8, offset=off)
        f.bits = np.unpackbits(raw, bitorder="little").astype(bool)
        return f

    def __eq__(self, other) -> bool:
        return (
            type(other) is type(self)
            and (self.j, self.k, self.seed, self.section_seed, self.section_bits)
            == (other.j, other.k, other.seed, other.section_seed, other.section_bits)
            and np.array_equal(self.section_n, other.section_n)
            and np.array_equal(self.bits, other.bits)
        )


def filter_from_bytes(data: bytes):
    if not data:
        raise ValueError("empty filter record")
    if data[0] == BloomFilter.kind:
        return BloomFilter.from_bytes(data)
    if data[0] == MultiSectionBloomFilter.kind:
        return MultiSectionBloomFilter.from_bytes(data)
    raise ValueError(f"unknown filter kind {data[0]}")
