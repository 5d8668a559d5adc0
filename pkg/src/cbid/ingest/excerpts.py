"""Drawing evaluation excerpts that occur exactly once in a corpus."""

from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np

from ..flows import FlowKey, PacketRecord

_ANCHOR = 8


class Corpus:
    """Packets materialized into one buffer, for substring statistics."""

    def __init__(self, packets: Sequence[PacketRecord]):
        self.packets = list(packets)
        self.lengths = np.fromiter((len(p.payload) for p in self.packets), dtype=np.int64, count=len(self.packets))
        self.offsets = np.zeros(len(self.packets), dtype=np.int64)
        if len(self.packets) > 1:
            np.cumsum(self.lengths[:-1], out=self.offsets[1:])
        self.buf = b"".join(p.payload for p in self.packets)

    def __len__(self) -> int:
        return len(self.packets)

    @property
    def flows(self) -> set[FlowKey]:
        return {p.flow for p in self.packets}

    def _packet_of(self, pos: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.offsets, pos, side="right") - 1

    def _contained(self, start: int, length: int) -> bool:
        pkt = int(self._packet_of(np.array([start]))[0])
        return start + length <= self.offsets[pkt] + self.lengths[pkt]

    def occurrences(self, needles: Sequence[bytes], cap: int = 2) -> list[int]:
        """Occurrences of each needle inside single payloads, counted up to ``cap``."""
        counts = [0] * len(needles)
        long_ids = [i for i, nd in enumerate(needles) if len(nd) >= _ANCHOR]
        for i, nd in enumerate(needles):
            if len(nd) < _ANCHOR:
                counts[i] = self._scan(nd, cap)
        if not long_ids:
            return counts

        # anchor each needle on its most varied 8-gram so zero runs do not flood the scan
        anchors = {}
        for i in long_ids:
            nd = needles[i]
            best = max(range(len(nd) - _ANCHOR + 1), key=lambda r: (len(set(nd[r : r + _ANCHOR])), -r))
            key = int.from_bytes(nd[best : best + _ANCHOR], "little")
            anchors.setdefault(key, []).append((i, best))
        keys = np.fromiter(anchors.keys(), dtype=np.uint64, count=len(anchors))
        buf = self.buf
        n = len(buf)
        hits = []
        for r in range(_ANCHOR):
            m = (n - r) // _ANCHOR
            if m <= 0:
                continue
            grams = np.frombuffer(buf, dtype="<u8", count=m, offset=r)
            pos = np.flatnonzero(np.isin(grams, keys))
            if pos.size:
                hits.append((pos * _ANCHOR + r, grams[pos]))
        for positions, grams in hits:
            for p, g in zip(positions.tolist(), grams.tolist()):
                for i, off in anchors[g]:
                    if counts[i] >= cap:
                        continue
                    nd = needles[i]
                    s = p - off
                    if s < 0 or buf[s : s + len(nd)] != nd:
                        continue
                    if self._contained(s, len(nd)):
                        counts[i] += 1
        return counts

    def _scan(self, needle: bytes, cap: int) -> int:
        found = 0
        s = self.buf.find(needle)
        while s != -1 and found < cap:
            if self._contained(s, len(needle)):
                found += 1
            s = self.buf.find(needle, s + 1)
        return found


def extract_unique_excerpts(
    corpus: Sequence[PacketRecord] | Corpus,
    length: int,
    count: int,
    seed: int = 0,
    max_rounds: int = 20,
) -> list[tuple[bytes, FlowKey]]:
    """Up to ``count`` excerpts of ``length`` bytes that appear once in the corpus.

    Start positions are drawn uniformly over all byte offsets that leave room
    for a full excerpt inside one payload. Warns when fewer are found.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    c = corpus if isinstance(corpus, Corpus) else Corpus(corpus)
    rng = np.random.default_rng(seed)
    room = np.maximum(c.lengths - length + 1, 0)
    total = int(room.sum())
    out: list[tuple[bytes, FlowKey]] = []
    taken: set[bytes] = set()
    if total > 0:
        cum = np.cumsum(room)
        for _ in range(max_rounds):
            need = count - len(out)
            if need <= 0:
                break
            draws = rng.integers(0, total, size=2 * need + 4)
            pkts = np.searchsorted(cum, draws, side="right")
            offs = draws - (cum[pkts] - room[pkts])
            cands = []
            for p, o in zip(pkts.tolist(), offs.tolist()):
                payload = c.packets[p].payload
                cands.append((payload[o : o + length], c.packets[p].flow))
            counts = c.occurrences([x for x, _ in cands])
            for (data, flow), k in zip(cands, counts):
                if k == 1 and data not in taken and len(out) < count:
                    taken.add(data)
                    out.append((data, flow))
    if len(out) < count:
        warnings.warn(f"found {len(out)} unique excerpts of {count} requested", stacklevel=2)
    return out
