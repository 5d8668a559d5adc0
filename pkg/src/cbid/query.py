"""Two-step investigation: appearance check, then index-pruned flow determination.

Excerpt blocks near the excerpt edges need care. Every boundary the excerpt
selects on its own is also selected in the original payload, because each
excerpt window is a payload window. The payload may however select extra
positions near the excerpt edges, through windows that reach past them. A
block between two consecutive excerpt boundaries is only queried when no
such extra boundary can fall inside it; that keeps the engine free of
false negatives without a fixed-width trim.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .bloom import MultiSectionBloomFilter
from .digest import ArchiveSegment
from .flows import FlowKey
from .hashing import TAG_TYPE1, TAG_TYPE2, hash_spans, qgram_hashes
from .partition import Block, PartitionConfig, winnow_boundaries


@dataclass(frozen=True)
class ExcerptQuery:
    data: bytes
    start: Optional[int] = None
    end: Optional[int] = None

    def __post_init__(self):
        if len(self.data) < 1:
            raise ValueError("excerpt must hold at least one byte")


def _possible_extra(h: np.ndarray, w: int) -> np.ndarray:
    """Positions the full payload might select although the excerpt does not."""
    n = h.shape[0]
    idx = np.arange(n)
    top = np.iinfo(np.uint64).max
    prefix = np.empty(n, dtype=np.uint64)
    prefix[0] = top
    prefix[1:] = np.minimum.accumulate(h[:-1])
    suffix = np.empty(n, dtype=np.uint64)
    suffix[-1] = top
    suffix[:-1] = np.minimum.accumulate(h[::-1][:-1])[::-1]
    left = (idx < w - 1) & ((h <= prefix) | (idx == 0))
    right = (idx > n - w) & ((h < suffix) | (idx == n - 1))
    return left | right


def excerpt_blocks(excerpt: bytes, cfg: PartitionConfig) -> list[Block]:
    """Blocks of ``excerpt`` guaranteed to equal blocks of any payload containing it.

    Each block carries its downsampling label; filter on ``kept`` for the
    ones to query.
    """
    data = bytes(excerpt)
    w, o = cfg.window_w, cfg.overlap_o
    h = qgram_hashes(data, cfg.qgram_q, cfg.hash_seed)
    if h.shape[0] < w:
        return []
    sel = winnow_boundaries(h, w)
    if sel.shape[0] < 2:
        return []
    extra = np.concatenate([[0], np.cumsum(_possible_extra(h, w))])
    a, b = sel[:-1], sel[1:]
    # extra positions strictly inside (a, b)
    inside = extra[b] - extra[a + 1]
    ok = (a - o >= 0) & (inside == 0)
    blocks = []
    for s, e in zip((a[ok] - o).tolist(), (b[ok] + 1).tolist()):
        blocks.append(Block(data[s:e], s, (e - s) >= cfg.threshold_T))
    return blocks


@dataclass
class AppearanceResult:
    matched: bool
    sections: frozenset
    assumed_positive: bool
    blocks_queried: int


@dataclass
class FlowDetermination:
    flows: list[tuple[FlowKey, int]]
    candidates: int
    type2_queries: int


class _Prepared:
    """Excerpt blocks and their hashes for one partition config and seed set."""

    def __init__(self, data: bytes, segment: ArchiveSegment):
        cfg = segment.cfg
        self.data = data
        blocks = excerpt_blocks(data, cfg.partition)
        self.kept = [b for b in blocks if b.kept]
        self.type2_blocks = self.kept if cfg.downsample_type2 else blocks
        seeds = segment.filter.element_seeds
        self.t1 = hash_spans(
            data,
            [b.start_offset for b in self.kept],
            [b.start_offset + len(b) for b in self.kept],
            seeds,
            tag=TAG_TYPE1,
        )


def _cache_key(segment: ArchiveSegment):
    return (segment.cfg.partition, segment.cfg.downsample_type2, segment.filter.element_seeds)


def _prepare(data: bytes, segment: ArchiveSegment, cache: Optional[dict]) -> _Prepared:
    if cache is None:
        return _Prepared(data, segment)
    key = _cache_key(segment)
    if key not in cache:
        cache[key] = _Prepared(data, segment)
    return cache[key]


def _query(filt, hashes: np.ndarray) -> tuple[np.ndarray, Optional[np.ndarray]]:
    if isinstance(filt, MultiSectionBloomFilter):
        return filt.query_hashes(hashes)
    return filt.query_hashes(hashes[:, :2]), None


def appearance_check(excerpt: bytes, segment: ArchiveSegment, _cache: Optional[dict] = None) -> AppearanceResult:
    prep = _prepare(bytes(excerpt), segment, _cache)
    n = len(prep.kept)
    if n == 0:
        return AppearanceResult(True, frozenset(), True, 0)
    found, sections = _query(segment.filter, prep.t1)
    matched = bool(found.all())
    secs = frozenset(sections[found].tolist()) if sections is not None else frozenset()
    return AppearanceResult(matched, secs, False, n)


def flow_determination(
    excerpt: bytes,
    segment: ArchiveSegment,
    sections: Iterable[int],
    prune: bool = True,
    _cache: Optional[dict] = None,
) -> FlowDetermination:
    """Confirm candidate flows with type-II queries.

    Candidates come from the index table when the segment has one and
    ``prune`` is set; otherwise every flow of the segment is tried.
    """
    prep = _prepare(bytes(excerpt), segment, _cache)
    if prune and segment.has_table:
        rows = segment.table.candidates(sections)
    else:
        rows = np.arange(len(segment.flows))
    blocks = prep.type2_blocks
    nb = len(blocks)
    if rows.size == 0:
        return FlowDetermination([], 0, 0)
    if nb == 0:
        return FlowDetermination([(segment.flows[r], 0) for r in rows.tolist()], int(rows.size), 0)

    keys = [segment.flows[r].to_bytes() for r in rows.tolist()]
    klen = np.array([len(k) for k in keys], dtype=np.int64)
    kend = np.cumsum(klen)
    kbuf = np.frombuffer(b"".join(keys), dtype=np.uint8)
    starts = np.array([b.start_offset for b in blocks], dtype=np.int64)
    ends = starts + np.array([len(b) for b in blocks], dtype=np.int64)
    nc = rows.size
    cand = np.repeat(np.arange(nc), nb)
    hashes = hash_spans(
        prep.data,
        np.tile(starts, nc),
        np.tile(ends, nc),
        segment.filter.element_seeds,
        tag=TAG_TYPE2,
        suffix=(kbuf, kend[cand] - klen[cand], kend[cand]),
    )
    found, _ = _query(segment.filter, hashes)
    found = found.reshape(nc, nb)
    hit = found.all(axis=1)
    confirmed = [(segment.flows[r], nb) for r in rows[hit].tolist()]
    return FlowDetermination(confirmed, int(nc), int(nc * nb))


@dataclass
class SegmentReport:
    segment: str
    interval: tuple[int, int]
    matched: bool
    assumed_positive: bool
    sections: list[int]
    blocks_queried: int
    flows: list[tuple[FlowKey, int]] = field(default_factory=list)
    candidates: int = 0
    type2_queries: int = 0

    def to_dict(self) -> dict:
        return {
            "segment": self.segment,
            "interval": list(self.interval),
            "matched": self.matched,
            "assumed_positive": self.assumed_positive,
            "sections": self.sections,
            "blocks_queried": self.blocks_queried,
            "flows": [{"flow": str(f), "blocks_confirmed": n} for f, n in self.flows],
            "candidates": self.candidates,
            "type2_queries": self.type2_queries,
        }


@dataclass
class AttributionReport:
    excerpt_len: int
    segments: list[SegmentReport] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def matched(self) -> list[SegmentReport]:
        return [s for s in self.segments if s.matched]

    @property
    def flows(self) -> set[FlowKey]:
        return {f for s in self.segments for f, _ in s.flows}

    @property
    def candidates(self) -> int:
        return sum(s.candidates for s in self.segments)

    @property
    def type2_queries(self) -> int:
        return sum(s.type2_queries for s in self.segments)

    def to_dict(self) -> dict:
        return {
            "excerpt_len": self.excerpt_len,
            "warnings": self.warnings,
            "segments": [s.to_dict() for s in self.segments],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def to_table(self) -> str:
        lines = [f"{'segment':<14} {'interval':<33} {'match':<6} {'assumed':<8} {'cand':>6} {'flows':>6}"]
        for s in self.segments:
            lines.append(
                f"{s.segment:<14} {f'{s.interval[0]}..{s.interval[1]}':<33} "
                f"{'yes' if s.matched else 'no':<6} {'yes' if s.assumed_positive else 'no':<8} "
                f"{s.candidates:>6} {len(s.flows):>6}"
            )
            for f, n in s.flows:
                lines.append(f"    {f}  blocks_confirmed={n}")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines)


def investigate(
    query: Union[ExcerptQuery, bytes],
    archive: Sequence[ArchiveSegment],
    prune: bool = True,
) -> AttributionReport:
    if not isinstance(query, ExcerptQuery):
        query = ExcerptQuery(bytes(query))
    report = AttributionReport(len(query.data))
    cache: dict = {}
    short = False
    for seg in archive:
        if not seg.overlaps(query.start, query.end):
            continue
        pc = seg.cfg.partition
        if len(query.data) < 2 * pc.window_w + pc.overlap_o:
            short = True
        app = appearance_check(query.data, seg, cache)
        entry = SegmentReport(
            segment=seg.name,
            interval=seg.interval,
            matched=app.matched,
            assumed_positive=app.assumed_positive,
            sections=sorted(app.sections),
            blocks_queried=app.blocks_queried,
        )
        if app.matched:
            if prune and seg.has_table:
                try:
                    seg.table
                except ValueError as exc:
                    raise OSError(f"segment {seg.name}: cannot load index table: {exc}") from exc
            fd = flow_determination(query.data, seg, app.sections, prune, cache)
            entry.flows = fd.flows
            entry.candidates = fd.candidates
            entry.type2_queries = fd.type2_queries
        report.segments.append(entry)
    if short:
        msg = "excerpt shorter than 2*window+overlap bytes; matches are likely assumed-positive"
        report.warnings.append(msg)
        warnings.warn(msg, stacklevel=2)
    return report
