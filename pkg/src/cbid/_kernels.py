"""Compiled inner loops. Everything here works on flat numpy arrays."""

from __future__ import annotations

import numpy as np
from numba import njit

_FNV_PRIME = np.uint64(0x100000001B3)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xFF51AFD7ED558CCD)
_M2 = np.uint64(0xC4CEB9FE1A85EC53)


@njit(cache=True, inline="always")
def _fmix64(h):
    h ^= h >> np.uint64(33)
    h *= _M1
    h ^= h >> np.uint64(33)
    h *= _M2
    h ^= h >> np.uint64(33)
    return h


@njit(cache=True)
def hash_spans(buf, starts, ends, tags, sfx_buf, sfx_starts, sfx_ends, seeds):
    """Hash ``tag | buf[start:end] | sfx_buf[sfx_start:sfx_end]`` under each seed.

    Returns an (n, len(seeds)) uint64 array. A negative tag means no tag byte.
    """
    n = starts.shape[0]
    ns = seeds.shape[0]
    out = np.empty((n, ns), dtype=np.uint64)
    state = np.empty(ns, dtype=np.uint64)
    for i in range(n):
        for s in range(ns):
            state[s] = _fmix64(seeds[s] ^ _GOLDEN)
        length = 0
        if tags[i] >= 0:
            b = np.uint64(tags[i])
            for s in range(ns):
                state[s] = (state[s] ^ b) * _FNV_PRIME
            length += 1
        for p in range(starts[i], ends[i]):
            b = np.uint64(buf[p])
            for s in range(ns):
                state[s] = (state[s] ^ b) * _FNV_PRIME
        length += ends[i] - starts[i]
        for p in range(sfx_starts[i], sfx_ends[i]):
            b = np.uint64(sfx_buf[p])
            for s in range(ns):
                state[s] = (state[s] ^ b) * _FNV_PRIME
        length += sfx_ends[i] - sfx_starts[i]
        for s in range(ns):
            out[i, s] = _fmix64(state[s] ^ np.uint64(length))
    return out


@njit(cache=True)
def winnow_segments(hashes, seg_starts, seg_ends, w):
    """Rightmost-minimum winnowing run independently on each [start, end) range.

    A range holding fewer than ``w`` hashes contributes its rightmost global
    minimum. Returns a boolean selection mask over ``hashes``.
    """
    n = hashes.shape[0]
    selected = np.zeros(n, dtype=np.bool_)
    dq = np.empty(n + 1, dtype=np.int64)
    for g in range(seg_starts.shape[0]):
        lo = seg_starts[g]
        hi = seg_ends[g]
        if hi <= lo:
            continue
        if hi - lo < w:
            best = lo
            for p in range(lo + 1, hi):
                if hashes[p] <= hashes[best]:
                    best = p
            selected[best] = True
            continue
        head = 0
        tail = 0
        for p in range(lo, hi):
            # equal values are evicted so the front is the rightmost minimum
            while tail > head and hashes[dq[tail - 1]] >= hashes[p]:
                tail -= 1
            dq[tail] = p
            tail += 1
            if dq[head] <= p - w:
                head += 1
            if p - lo >= w - 1:
                selected[dq[head]] = True
    return selected
