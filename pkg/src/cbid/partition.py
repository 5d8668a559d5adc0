"""Content-defined payload partitioning (winnowing + shingling) and downsampling.

Boundaries are the positions picked by rightmost-minimum winnowing over
q-gram hashes. A block runs from ``overlap`` bytes before the previous
boundary up to and including the current boundary, so its length is
``gap + overlap + 1`` where ``1 <= gap <= window``. With the defaults
(window 64, overlap 4) that is 6..69 bytes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .hashing import as_u8, qgram_hashes


@dataclass(frozen=True)
class PartitionConfig:
    window_w: int = 64
    overlap_o: int = 4
    qgram_q: int = 4
    threshold_T: int = 40
    hash_seed: int = 0

    def __post_init__(self):
        if self.window_w < 2:
            raise ValueError("window_w must be >= 2")
        if self.overlap_o < 0:
            raise ValueError("overlap_o must be >= 0")
        if self.qgram_q < 1:
            raise ValueError("qgram_q must be >= 1")
        if self.threshold_T < 0:
            raise ValueError("threshold_T must be >= 0")

    @property
    def min_block(self) -> int:
        return self.overlap_o + 2

    @property
    def max_block(self) -> int:
        return self.window_w + self.overlap_o + 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Block:
    data: bytes
    start_offset: int
    kept: bool

    def __len__(self) -> int:
        return len(self.data)


class Spans(NamedTuple):
    """Blocks of many payloads at once, as offsets into one shared buffer."""

    packet: np.ndarray  # index of the owning payload
    start: np.ndarray  # absolute offset into the buffer
    end: np.ndarray

    @property
    def lengths(self) -> np.ndarray:
        return self.end - self.start


def rolling_hashes(payload, cfg: PartitionConfig) -> np.ndarray:
    return qgram_hashes(payload, cfg.qgram_q, cfg.hash_seed)


def winnow_boundaries(hashes, window_w: int) -> np.ndarray:
    """Positions chosen by rightmost-minimum winnowing, strictly increasing."""
    if window_w < 2:
        raise ValueError("window_w must be >= 2")
    h = np.ascontiguousarray(hashes, dtype=np.uint64)
    if h.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    mask = _kernels.winnow_segments(
        h, np.zeros(1, np.int64), np.array([h.shape[0]], np.int64), window_w
    )
    return np.flatnonzero(mask)


def packet_offsets(payloads) -> tuple[bytes, np.ndarray, np.ndarray]:
    lengths = np.fromiter((len(p) for p in payloads), dtype=np.int64, count=len(payloads))
    offsets = np.zeros(len(payloads), dtype=np.int64)
    if len(payloads) > 1:
        np.cumsum(lengths[:-1], out=offsets[1:])
    return b"".join(payloads), offsets, lengths


def partition_spans(buf, offsets, lengths, cfg: PartitionConfig) -> Spans:
    """Partition every payload ``buf[off:off+len]`` independently.

    Equivalent to calling :func:`partition_payload` per payload, but runs the
    hashing and winnowing over the whole buffer in one pass.
    """
    arr = as_u8(buf)
    offsets = np.asarray(offsets, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    q, o = cfg.qgram_q, cfg.overlap_o
    hashes = qgram_hashes(arr, q, cfg.hash_seed)
    nh = np.maximum(lengths - q + 1, 0)
    seg_start = offsets
    seg_end = offsets + nh
    mask = _kernels.winnow_segments(hashes, seg_start, seg_end, cfg.window_w)
    sel = np.flatnonzero(mask)
    if sel.shape[0] == 0:
        empty = np.empty(0, dtype=np.int64)
        return Spans(empty, empty, empty)
    # zero-length payloads share offsets with their neighbours; skip them
    nonempty = np.flatnonzero(nh > 0)
    pkt = nonempty[np.searchsorted(offsets[nonempty], sel, side="right") - 1]

    first = np.ones(sel.shape[0], dtype=bool)
    first[1:] = pkt[1:] != pkt[:-1]
    last = np.ones(sel.shape[0], dtype=bool)
    last[:-1] = pkt[1:] != pkt[:-1]

    prev = np.empty_like(sel)
    prev[1:] = sel[:-1]
    starts = np.where(first, offsets[pkt], np.maximum(prev - o, offsets[pkt]))
    ends = sel + 1
    fin_pkt = pkt[last]
    fin_start = np.maximum(sel[last] - o, offsets[fin_pkt])
    fin_end = offsets[fin_pkt] + lengths[fin_pkt]

    all_pkt = np.concatenate([pkt, fin_pkt])
    all_start = np.concatenate([starts, fin_start])
    all_end = np.concatenate([ends, fin_end])
    span = all_end - all_start
    ok = (span >= cfg.min_block) & (span <= cfg.max_block)
    all_pkt, all_start, all_end = all_pkt[ok], all_start[ok], all_end[ok]
    order = np.lexsort((all_end, all_start))
    return Spans(all_pkt[order], all_start[order], all_end[order])


def partition_payload(payload, cfg: PartitionConfig | None = None) -> list[Block]:
    """Split one payload into shingled blocks labelled against the threshold.

    An empty list means the payload produced no block within the size bounds
    (too short, or no usable boundary).
    """
    cfg = cfg or PartitionConfig()
    data = bytes(payload)
    if not data:
        return []
    spans = partition_spans(data, [0], [len(data)], cfg)
    return [
        Block(data[s:e], int(s), (e - s) >= cfg.threshold_T)
        for s, e in zip(spans.start.tolist(), spans.end.tolist())
    ]


def downsample(blocks: list[Block], T: int) -> tuple[list[Block], bool]:
    """Drop blocks shorter than ``T``; also report whether everything went."""
    kept = [b for b in blocks if len(b.data) >= T]
    return kept, bool(blocks) and not kept
