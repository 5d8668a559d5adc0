"""Keyed 64-bit hashing shared by the partitioner and the filters.

Two families live here:

* q-gram hashes: a base-257 polynomial over ``q`` bytes, then a keyed
  64-bit finalizer. Used for winnowing.
* element hashes: FNV-1a style byte absorption with a keyed start state and
  a murmur3 finalizer. Used for Bloom filter indices and section choice.

Both have a pure-Python twin (``reference_*``) that tests compare against.
"""

from __future__ import annotations

import numpy as np

from . import _kernels

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_FNV_PRIME = 0x100000001B3
_M1 = 0xFF51AFD7ED558CCD
_M2 = 0xC4CEB9FE1A85EC53
QGRAM_BASE = 257

NO_TAG = -1
TAG_TYPE1 = 0x01
TAG_TYPE2 = 0x02


def fmix64_int(h: int) -> int:
    h &= MASK64
    h ^= h >> 33
    h = (h * _M1) & MASK64
    h ^= h >> 33
    h = (h * _M2) & MASK64
    h ^= h >> 33
    return h


def fmix64(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.uint64).copy()
    h ^= h >> np.uint64(33)
    h *= np.uint64(_M1)
    h ^= h >> np.uint64(33)
    h *= np.uint64(_M2)
    h ^= h >> np.uint64(33)
    return h


def derive_seed(seed: int, label: int) -> int:
    """Independent-looking sub-seed for a numbered purpose."""
    return fmix64_int((seed & MASK64) ^ fmix64_int(label * _GOLDEN))


def as_u8(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        return data.astype(np.uint8, copy=False)
    return np.frombuffer(bytes(data), dtype=np.uint8)


def qgram_hashes(buf, q: int, seed: int) -> np.ndarray:
    """Hash of every q-byte window of ``buf``; ``len(buf) - q + 1`` values."""
    arr = as_u8(buf)
    n = arr.shape[0] - q + 1
    if n <= 0:
        return np.empty(0, dtype=np.uint64)
    acc = np.zeros(n, dtype=np.uint64)
    base = np.uint64(QGRAM_BASE)
    for t in range(q):
        acc = acc * base + arr[t : t + n].astype(np.uint64)
    key = np.uint64(fmix64_int(seed ^ _GOLDEN))
    return fmix64(acc ^ key)


def reference_qgram_hash(gram: bytes, seed: int) -> int:
    acc = 0
    for b in gram:
        acc = (acc * QGRAM_BASE + b) & MASK64
    return fmix64_int(acc ^ fmix64_int(seed ^ _GOLDEN))


def reference_element_hash(data: bytes, seed: int) -> int:
    h = fmix64_int(seed ^ _GOLDEN)
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & MASK64
    return fmix64_int(h ^ len(data))


def _i64(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.int64)


def hash_spans(buf, starts, ends, seeds, tag: int = NO_TAG, suffix=None) -> np.ndarray:
    """Element hashes for ``tag | buf[starts[i]:ends[i]] | suffix[i]``.

    ``suffix`` is ``None`` or a tuple ``(sfx_buf, sfx_starts, sfx_ends)``.
    Returns an ``(n, len(seeds))`` uint64 array.
    """
    starts = _i64(starts)
    n = starts.shape[0]
    if suffix is None:
        sfx_buf = np.zeros(1, dtype=np.uint8)
        sfx_starts = np.zeros(n, dtype=np.int64)
        sfx_ends = sfx_starts
    else:
        sfx_buf, sfx_starts, sfx_ends = suffix
        sfx_buf = as_u8(sfx_buf)
        if sfx_buf.shape[0] == 0:
            sfx_buf = np.zeros(1, dtype=np.uint8)
        sfx_starts = _i64(sfx_starts)
        sfx_ends = _i64(sfx_ends)
    tags = np.full(n, tag, dtype=np.int64)
    seeds = np.asarray([s & MASK64 for s in seeds], dtype=np.uint64)
    arr = as_u8(buf)
    if arr.shape[0] == 0:
        arr = np.zeros(1, dtype=np.uint8)
    return _kernels.hash_spans(arr, starts, _i64(ends), tags, sfx_buf, sfx_starts, sfx_ends, seeds)


def hash_elements(elements, seeds) -> np.ndarray:
    """Element hashes for a list of byte strings (no tag)."""
    elements = [bytes(e) for e in elements]
    lengths = np.fromiter((len(e) for e in elements), dtype=np.int64, count=len(elements))
    ends = np.cumsum(lengths)
    starts = ends - lengths
    return hash_spans(b"".join(elements), starts, ends, seeds)
