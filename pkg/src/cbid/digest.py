"""Traffic digesting: packets in, finalized archive segments out.

Per packet the engine registers the flow, partitions the payload, drops
blocks below the downsampling threshold, inserts each kept block as a
type-I element (recording its section in the flow's index row) and as a
type-II element (block bytes followed by the flow key). A segment is closed
once its worst section reaches the configured false-positive level or its
raw byte budget is spent.

:func:`digest_stream` does the same work as repeated
:meth:`OpenSegment.digest_packet` / :func:`maybe_rotate` calls, but hashes
and partitions whole chunks of packets with vectorized kernels.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable, Iterator, Optional

import numpy as np

from .bloom import BloomFilter, MultiSectionBloomFilter, fp_capacity
from .flows import FlowKey, PacketRecord
from .hashing import TAG_TYPE1, TAG_TYPE2, hash_spans
from .index import BitmapIndexTable, FlowList, codec_id, compress_table, decompress_table
from .partition import Block, PartitionConfig, partition_spans

logger = logging.getLogger(__name__)

LAYOUTS = ("msbf", "bloom")


class OrderingError(ValueError):
    """Packet timestamps went backwards."""


@dataclass(frozen=True)
class DigestConfig:
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    sections_j: int = 2048
    hashes_k: int = 4
    target_dr: float = 100.0
    rotation_fp: float = 0.01
    interval_raw_budget: int = 256 * 2**20
    # "bloom" is a conventional filter without sections or index table
    layout: str = "msbf"
    index_table: bool = True
    downsample_type2: bool = True
    filter_bits: Optional[int] = None
    codec: str = "lzma2"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.partition, dict):
            object.__setattr__(self, "partition", PartitionConfig(**self.partition))
        if self.layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {LAYOUTS}")
        if self.target_dr <= 1:
            raise ValueError("target_dr must be > 1")
        if not 0 < self.rotation_fp < 1:
            raise ValueError("rotation_fp must be in (0, 1)")
        if self.interval_raw_budget < 1:
            raise ValueError("interval_raw_budget must be positive")
        if self.hashes_k < 1 or self.sections_j < 1:
            raise ValueError("hashes_k and sections_j must be >= 1")
        codec_id(self.codec)
        min_bits = self.sections_j * 64 if self.layout == "msbf" else 1
        if self.total_bits < min_bits:
            raise ValueError(
                f"filter of {self.total_bits} bits is below the {min_bits}-bit minimum; "
                "raise interval_raw_budget or lower target_dr"
            )

    @property
    def total_bits(self) -> int:
        if self.filter_bits is not None:
            return int(self.filter_bits)
        return int(8 * self.interval_raw_budget / self.target_dr)

    @property
    def uses_index(self) -> bool:
        return self.layout == "msbf" and self.index_table

    def new_filter(self):
        if self.layout == "msbf":
            return MultiSectionBloomFilter(self.total_bits, self.sections_j, self.hashes_k, self.seed)
        return BloomFilter(self.total_bits, self.hashes_k, self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["partition"] = self.partition.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DigestConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown DigestConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass
class Counters:
    raw_bytes: int = 0
    blocks_total: int = 0
    blocks_kept: int = 0
    packets: int = 0
    type1_inserted: int = 0
    type2_inserted: int = 0


@dataclass
class ArchiveSegment:
    """One finalized interval: filter, flow list, compressed index table, config."""

    interval: tuple[int, int]
    filter: object
    flows: FlowList
    cfg: DigestConfig
    counters: Counters
    table_blob: Optional[bytes] = None
    table_codec: int = 0
    table_shape: tuple[int, int] = (0, 0)
    name: str = "segment"
    decompressions: int = field(default=0, compare=False)
    _table: Optional[BitmapIndexTable] = field(default=None, compare=False, repr=False)

    @property
    def has_table(self) -> bool:
        return self.table_blob is not None

    @property
    def table(self) -> Optional[BitmapIndexTable]:
        """Index table, decompressed on first use."""
        if self.table_blob is None:
            return None
        if self._table is None:
            rows, cols = self.table_shape
            self._table = decompress_table(self.table_blob, self.table_codec, rows, cols)
            self.decompressions += 1
        return self._table

    @property
    def filter_nbytes(self) -> int:
        return self.filter.nbytes

    @property
    def table_nbytes(self) -> int:
        return len(self.table_blob) if self.table_blob is not None else 0

    @property
    def data_reduction(self) -> float:
        return self.counters.raw_bytes / (self.filter_nbytes + self.table_nbytes)

    def overlaps(self, start: Optional[int], end: Optional[int]) -> bool:
        lo, hi = self.interval
        return (start is None or hi >= start) and (end is None or lo <= end)


def make_type1(block: Block) -> bytes:
    return bytes([TAG_TYPE1]) + block.data


def make_type2(block: Block, flow: FlowKey) -> bytes:
    """Flow-bound element: domain tag, block bytes, canonical flow key."""
    return bytes([TAG_TYPE2]) + block.data + flow.to_bytes()


class _Chunk:
    """Hashed, partitioned view of a run of packets."""

    def __init__(self, packets: list[PacketRecord], cfg: DigestConfig, seeds):
        self.packets = packets
        payloads = [p.payload for p in packets]
        lengths = np.fromiter((len(p) for p in payloads), dtype=np.int64, count=len(payloads))
        offsets = np.zeros(len(payloads), dtype=np.int64)
        if len(payloads) > 1:
            np.cumsum(lengths[:-1], out=offsets[1:])
        self.buf = np.frombuffer(b"".join(payloads), dtype=np.uint8)
        self.lengths = lengths

        keys: dict[FlowKey, int] = {}
        fk_local = np.empty(len(packets), dtype=np.int64)
        for i, p in enumerate(packets):
            fk_local[i] = keys.setdefault(p.flow, len(keys))
        fk_bytes = [k.to_bytes() for k in keys]
        fk_len = np.array([len(b) for b in fk_bytes], dtype=np.int64)
        fk_end = np.cumsum(fk_len)
        fk_buf = np.frombuffer(b"".join(fk_bytes), dtype=np.uint8)

        pc = cfg.partition
        spans = partition_spans(self.buf, offsets, lengths, pc)
        self.block_pkt = spans.packet
        kept = spans.lengths >= pc.threshold_T
        self.blocks_per_pkt = np.bincount(spans.packet, minlength=len(packets))
        self.kept_per_pkt = np.bincount(spans.packet[kept], minlength=len(packets))

        self.t1_pkt = spans.packet[kept]
        self.t1_hash = hash_spans(self.buf, spans.start[kept], spans.end[kept], seeds, tag=TAG_TYPE1)
        t2 = kept if cfg.downsample_type2 else np.ones_like(kept)
        self.t2_pkt = spans.packet[t2]
        owner = fk_local[self.t2_pkt]
        self.t2_hash = hash_spans(
            self.buf,
            spans.start[t2],
            spans.end[t2],
            seeds,
            tag=TAG_TYPE2,
            suffix=(fk_buf, fk_end[owner] - fk_len[owner], fk_end[owner]),
        )


class OpenSegment:
    """Mutable digest of the interval currently being filled."""

    def __init__(self, cfg: DigestConfig):
        self.cfg = cfg
        self.filter = cfg.new_filter()
        self.flows = FlowList()
        self.table = BitmapIndexTable(cfg.sections_j) if cfg.uses_index else None
        self.counters = Counters()
        self.interval: Optional[tuple[int, int]] = None
        if cfg.layout == "msbf":
            self.capacity = fp_capacity(self.filter.section_bits, cfg.hashes_k, cfg.rotation_fp)
        else:
            self.capacity = fp_capacity(self.filter.m, cfg.hashes_k, cfg.rotation_fp)

    @property
    def empty(self) -> bool:
        return self.counters.packets == 0

    def _load(self) -> np.ndarray:
        if isinstance(self.filter, MultiSectionBloomFilter):
            return self.filter.section_n
        return np.array([self.filter.inserted_n], dtype=np.int64)

    def should_rotate(self) -> bool:
        if self.empty:
            return False
        if self.counters.raw_bytes >= self.cfg.interval_raw_budget:
            return True
        return int(self._load().max()) >= self.capacity

    def digest_packet(self, pkt: PacketRecord) -> "OpenSegment":
        if self.interval is not None and pkt.timestamp < self.interval[1]:
            raise OrderingError(f"timestamp {pkt.timestamp} precedes {self.interval[1]}")
        chunk = _Chunk([pkt], self.cfg, self.filter.element_seeds)
        self._apply(chunk, 0, 1)
        return self

    def _apply(self, chunk: _Chunk, a: int, b: int) -> None:
        """Fold packets ``a..b-1`` of a chunk into this segment."""
        pkts = chunk.packets
        rows = np.empty(b - a, dtype=np.int64)
        for i in range(a, b):
            rows[i - a] = self.flows.register(pkts[i].flow)
        if self.table is not None and self.table.rows < len(self.flows):
            self.table.add_rows(len(self.flows) - self.table.rows)

        lo1, hi1 = np.searchsorted(chunk.t1_pkt, [a, b])
        lo2, hi2 = np.searchsorted(chunk.t2_pkt, [a, b])
        if isinstance(self.filter, MultiSectionBloomFilter):
            sections = self.filter.insert_hashes(chunk.t1_hash[lo1:hi1])
            if self.table is not None and hi1 > lo1:
                self.table.set_bits(rows[chunk.t1_pkt[lo1:hi1] - a], sections)
        else:
            self.filter.insert_hashes(chunk.t1_hash[lo1:hi1, :2])
        t2 = chunk.t2_hash[lo2:hi2]
        self.filter.insert_hashes(t2 if isinstance(self.filter, MultiSectionBloomFilter) else t2[:, :2])

        c = self.counters
        c.raw_bytes += int(chunk.lengths[a:b].sum())
        c.blocks_total += int(chunk.blocks_per_pkt[a:b].sum())
        c.blocks_kept += int(chunk.kept_per_pkt[a:b].sum())
        c.packets += b - a
        c.type1_inserted += int(hi1 - lo1)
        c.type2_inserted += int(hi2 - lo2)
        first = self.interval[0] if self.interval else pkts[a].timestamp
        self.interval = (first, pkts[b - 1].timestamp)

    def _rotation_point(self, chunk: _Chunk, a: int) -> int:
        """Index of the first packet at or after ``a`` whose digestion triggers rotation,
        or ``len(chunk.packets)`` if none does."""
        n = len(chunk.packets)
        raw = self.counters.raw_bytes + np.cumsum(chunk.lengths[a:])
        hits = np.flatnonzero(raw >= self.cfg.interval_raw_budget)
        best = a + int(hits[0]) if hits.size else n

        lo1 = np.searchsorted(chunk.t1_pkt, a)
        lo2 = np.searchsorted(chunk.t2_pkt, a)
        pkt = np.concatenate([chunk.t1_pkt[lo1:], chunk.t2_pkt[lo2:]])
        if pkt.size == 0:
            return best
        if isinstance(self.filter, MultiSectionBloomFilter):
            j = self.filter.j
            sec = np.concatenate(
                [
                    self.filter.sections_of_hashes(chunk.t1_hash[lo1:]),
                    self.filter.sections_of_hashes(chunk.t2_hash[lo2:]),
                ]
            )
        else:
            j = 1
            sec = np.zeros(pkt.size, dtype=np.int64)
        load = self._load()
        # running count of each element within its section, in packet order
        order = np.lexsort((pkt, sec))
        s_sorted = sec[order]
        group_start = np.searchsorted(s_sorted, np.arange(j))
        rank = np.arange(order.size) - group_start[s_sorted] + 1
        running = np.empty(order.size, dtype=np.int64)
        running[order] = load[s_sorted] + rank
        over = running >= self.capacity
        if over.any():
            best = min(best, int(pkt[over].min()))
        return best

    def finalize(self, name: str = "segment") -> ArchiveSegment:
        blob, cid, shape = None, 0, (0, 0)
        if self.table is not None:
            blob, cid = compress_table(self.table, self.cfg.codec)
            shape = (self.table.rows, self.table.columns)
        seg = ArchiveSegment(
            interval=self.interval or (0, 0),
            filter=self.filter,
            flows=self.flows,
            cfg=self.cfg,
            counters=replace(self.counters),
            table_blob=blob,
            table_codec=cid,
            table_shape=shape,
            name=name,
        )
        seg._table = self.table
        c = self.counters
        logger.info(
            json.dumps(
                {
                    "event": "segment",
                    "name": name,
                    "packets": c.packets,
                    "raw_bytes": c.raw_bytes,
                    "blocks_total": c.blocks_total,
                    "blocks_kept": c.blocks_kept,
                    "block_reduction": (c.blocks_total / c.blocks_kept) if c.blocks_kept else None,
                    "dr": round(seg.data_reduction, 3),
                },
                sort_keys=True,
            )
        )
        return seg


def maybe_rotate(state: OpenSegment, name: str = "segment") -> tuple[Optional[ArchiveSegment], OpenSegment]:
    """Close ``state`` if a rotation rule fires; returns (closed or None, open segment)."""
    if state.should_rotate():
        return state.finalize(name), OpenSegment(state.cfg)
    return None, state


def _chunks(packets: Iterable[PacketRecord], max_bytes: int, max_packets: int) -> Iterator[list[PacketRecord]]:
    batch: list[PacketRecord] = []
    size = 0
    for p in packets:
        batch.append(p)
        size += len(p.payload)
        if size >= max_bytes or len(batch) >= max_packets:
            yield batch
            batch, size = [], 0
    if batch:
        yield batch


def digest_stream(
    packets: Iterable[PacketRecord],
    cfg: DigestConfig | None = None,
    chunk_bytes: int = 4 * 2**20,
    chunk_packets: int = 50_000,
) -> list[ArchiveSegment]:
    cfg = cfg or DigestConfig()
    segments: list[ArchiveSegment] = []
    state = OpenSegment(cfg)
    last_ts: Optional[int] = None

    def close():
        nonlocal state
        segments.append(state.finalize(f"segment-{len(segments)}"))
        state = OpenSegment(cfg)

    for batch in _chunks(packets, chunk_bytes, chunk_packets):
        ts = np.fromiter((p.timestamp for p in batch), dtype=np.int64, count=len(batch))
        if (last_ts is not None and ts[0] < last_ts) or np.any(np.diff(ts) < 0):
            raise OrderingError("packet timestamps must be non-decreasing")
        last_ts = int(ts[-1])
        chunk = _Chunk(batch, cfg, state.filter.element_seeds)
        a = 0
        while a < len(batch):
            b = state._rotation_point(chunk, a)
            if b >= len(batch):
                state._apply(chunk, a, len(batch))
                break
            state._apply(chunk, a, b + 1)
            close()
            a = b + 1
    if not state.empty:
        close()
    return segments
