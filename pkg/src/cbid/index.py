"""Per-interval flow list and the flows x sections bitmap index table."""

from __future__ import annotations

import bz2
import lzma
import math
import zlib
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .flows import FlowKey


class FlowList:
    """Ordered, duplicate-free list of flows with a reverse lookup."""

    def __init__(self, flows: Iterable[FlowKey] = ()):
        self.flows: list[FlowKey] = []
        self._rows: dict[FlowKey, int] = {}
        for f in flows:
            self.register(f)

    def register(self, flow: FlowKey) -> int:
        row = self._rows.get(flow)
        if row is None:
            row = len(self.flows)
            self._rows[flow] = row
            self.flows.append(flow)
        return row

    def row_of(self, flow: FlowKey) -> int:
        return self._rows[flow]

    def __contains__(self, flow) -> bool:
        return flow in self._rows

    def __len__(self) -> int:
        return len(self.flows)

    def __iter__(self):
        return iter(self.flows)

    def __getitem__(self, row: int) -> FlowKey:
        return self.flows[row]

    def __eq__(self, other) -> bool:
        return isinstance(other, FlowList) and self.flows == other.flows


class BitmapIndexTable:
    """rows x columns bit matrix; bit (r, c) marks flow r as present in section c."""

    def __init__(self, columns: int, rows: int = 0):
        if columns < 1:
            raise ValueError("columns must be >= 1")
        self.columns = int(columns)
        self._bits = np.zeros((max(rows, 16), self.columns), dtype=bool)
        self.rows = int(rows)

    @property
    def bits(self) -> np.ndarray:
        return self._bits[: self.rows]

    def add_rows(self, count: int = 1) -> None:
        need = self.rows + count
        if need > self._bits.shape[0]:
            grown = np.zeros((max(need, 2 * self._bits.shape[0]), self.columns), dtype=bool)
            grown[: self.rows] = self._bits[: self.rows]
            self._bits = grown
        self.rows = need

    def set_bit(self, row: int, section: int) -> None:
        if not (0 <= row < self.rows and 0 <= section < self.columns):
            raise IndexError(f"bit ({row}, {section}) outside {self.rows}x{self.columns} table")
        self._bits[row, section] = True

    def set_bits(self, rows: np.ndarray, sections: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=np.int64)
        sections = np.asarray(sections, dtype=np.int64)
        if rows.size and (rows.max() >= self.rows or rows.min() < 0 or sections.max() >= self.columns or sections.min() < 0):
            raise IndexError("bit outside table")
        self._bits[rows, sections] = True

    def row(self, r: int) -> np.ndarray:
        return self.bits[r]

    def row_string(self, r: int) -> str:
        return "".join("1" if b else "0" for b in self.bits[r])

    def candidates(self, sections: Iterable[int]) -> np.ndarray:
        """Row ids having a 1 in every given column (all rows when none given)."""
        cols = sorted(set(int(s) for s in sections))
        if any(c < 0 or c >= self.columns for c in cols):
            raise IndexError("section outside table")
        if not cols:
            return np.arange(self.rows)
        return np.flatnonzero(self.bits[:, cols].all(axis=1))

    def ones_fraction(self) -> float:
        total = self.rows * self.columns
        return float(np.count_nonzero(self.bits)) / total if total else 0.0

    def pack(self) -> bytes:
        """Row-major bytes; each row padded to a byte boundary, bit c at byte c//8, bit c%8."""
        return np.packbits(self.bits, axis=1, bitorder="little").tobytes()

    @classmethod
    def unpack(cls, data: bytes, rows: int, columns: int) -> "BitmapIndexTable":
        t = cls(columns, rows)
        if rows:
            row_bytes = (columns + 7) // 8
            raw = np.frombuffer(data, dtype=np.uint8, count=rows * row_bytes).reshape(rows, row_bytes)
            t._bits[:rows] = np.unpackbits(raw, axis=1, bitorder="little", count=columns).astype(bool)
        return t

    @property
    def raw_nbytes(self) -> int:
        return self.rows * ((self.columns + 7) // 8)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BitmapIndexTable)
            and (self.rows, self.columns) == (other.rows, other.columns)
            and np.array_equal(self.bits, other.bits)
        )


def candidate_flows(table: BitmapIndexTable, flows: FlowList, sections: Iterable[int]) -> list[FlowKey]:
    return [flows[r] for r in table.candidates(sections).tolist()]


# bitmap bytes carry no useful literal or position context, so lc/lp/pb are zeroed
_LZMA_FILTERS = [{"id": lzma.FILTER_LZMA2, "preset": 6, "lc": 0, "lp": 0, "pb": 0}]

CODECS = {
    0: ("raw", lambda b: b, lambda b: b),
    1: (
        "lzma2",
        lambda b: lzma.compress(b, format=lzma.FORMAT_RAW, filters=_LZMA_FILTERS),
        lambda b: lzma.decompress(b, format=lzma.FORMAT_RAW, filters=_LZMA_FILTERS),
    ),
    2: ("deflate", lambda b: zlib.compress(b, 9), zlib.decompress),
    3: ("bzip2", lambda b: bz2.compress(b, 9), bz2.decompress),
}
CODEC_IDS = {name: cid for cid, (name, _, _) in CODECS.items()}
DEFAULT_CODEC = "lzma2"


def codec_id(codec) -> int:
    if isinstance(codec, int):
        if codec not in CODECS:
            raise ValueError(f"unknown codec id {codec}")
        return codec
    try:
        return CODEC_IDS[codec]
    except KeyError:
        raise ValueError(f"unknown codec {codec!r}; choose from {sorted(CODEC_IDS)}") from None


def compress_table(table: BitmapIndexTable, codec=DEFAULT_CODEC) -> tuple[bytes, int]:
    cid = codec_id(codec)
    return CODECS[cid][1](table.pack()), cid


def decompress_table(data: bytes, cid: int, rows: int, columns: int) -> BitmapIndexTable:
    try:
        raw = CODECS[codec_id(cid)][2](data)
    except (lzma.LZMAError, zlib.error, OSError, EOFError) as exc:
        raise ValueError(f"corrupt table data: {exc}") from exc
    if len(raw) != rows * ((columns + 7) // 8):
        raise ValueError("decompressed table has the wrong size")
    return BitmapIndexTable.unpack(raw, rows, columns)


@dataclass(frozen=True)
class TableStats:
    ones_fraction: float
    empirical_entropy_bits: float
    best_theoretical_ratio: float
    symbol_size: int


def symbol_entropy(data: bytes, symbol_size: int) -> float:
    """Empirical Shannon entropy (bits) of ``data`` read as fixed-size symbols.

    A trailing partial symbol is ignored.
    """
    if symbol_size < 1:
        raise ValueError("symbol_size must be >= 1")
    count = len(data) // symbol_size
    if count == 0:
        raise ValueError("table smaller than one symbol")
    arr = np.frombuffer(data, dtype=np.uint8, count=count * symbol_size).reshape(count, symbol_size)
    _, freq = np.unique(np.ascontiguousarray(arr).view(np.dtype((np.void, symbol_size))).ravel(), return_counts=True)
    p = freq / count
    return float(max(0.0, -(p * np.log2(p)).sum()))


def table_stats(table: BitmapIndexTable, symbol_size: int) -> TableStats:
    h = symbol_entropy(table.pack(), symbol_size)
    ratio = math.inf if h == 0 else 8 * symbol_size / h
    return TableStats(table.ones_fraction(), h, ratio, symbol_size)
