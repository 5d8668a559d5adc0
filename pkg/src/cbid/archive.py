"""The ``CBID`` archive file: a checksummed, versioned container of segments.

Layout (all integers little-endian)::

    header     magic "CBID" | version u16 | flags u16 | count u32 | xxh64 u64
    directory  count x (offset u64 | length u64 | xxh64 u64) | xxh64 u64
    segments   concatenated bodies, in directory order

The header checksum covers the 12 bytes before it, the directory checksum
covers the directory entries, and each body is covered by its own entry.
See ``docs/archive-format.md`` for the body layout.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Sequence

import xxhash

from .bloom import filter_from_bytes
from .digest import ArchiveSegment, Counters, DigestConfig
from .flows import FLOWKEY_RECORD_SIZE, FlowKey
from .index import FlowList

MAGIC = b"CBID"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHHI")
ENTRY = struct.Struct("<QQQ")
CHECKSUM = struct.Struct("<Q")
COUNTERS = struct.Struct("<6Q")
TABLE_HEAD = struct.Struct("<BBIIQ")

FLAG_NONE = 0


class ArchiveError(ValueError):
    """The file is not a readable archive."""


class ChecksumError(ArchiveError):
    pass


def checksum(data: bytes) -> int:
    return xxhash.xxh64_intdigest(data)


def _blob(data: bytes) -> bytes:
    return struct.pack("<Q", len(data)) + data


def encode_segment(seg: ArchiveSegment) -> bytes:
    out = io.BytesIO()
    name = seg.name.encode()
    out.write(struct.pack("<H", len(name)) + name)
    out.write(_blob(seg.cfg.to_json().encode()))
    out.write(struct.pack("<qq", *seg.interval))
    out.write(struct.pack("<I", len(seg.flows)))
    for f in seg.flows:
        out.write(f.to_record())
    out.write(_blob(seg.filter.to_bytes()))
    rows, cols = seg.table_shape
    table = seg.table_blob or b""
    out.write(TABLE_HEAD.pack(seg.table_blob is not None, seg.table_codec, rows, cols, len(table)))
    out.write(table)
    c = seg.counters
    out.write(COUNTERS.pack(c.raw_bytes, c.blocks_total, c.blocks_kept, c.packets, c.type1_inserted, c.type2_inserted))
    return out.getvalue()


class _Cursor:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ArchiveError(f"{self.what}: truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct | str):
        st = st if isinstance(st, struct.Struct) else struct.Struct(st)
        return st.unpack(self.take(st.size))

    def blob(self) -> bytes:
        (n,) = self.unpack("<Q")
        return self.take(n)


def decode_segment(body: bytes, what: str = "segment") -> ArchiveSegment:
    cur = _Cursor(body, what)
    (nlen,) = cur.unpack("<H")
    name = cur.take(nlen).decode()
    cfg = DigestConfig.from_dict(json.loads(cur.blob()))
    interval = cur.unpack("<qq")
    (nflows,) = cur.unpack("<I")
    flows = FlowList(FlowKey.from_record(cur.take(FLOWKEY_RECORD_SIZE)) for _ in range(nflows))
    filt = filter_from_bytes(cur.blob())
    has_table, codec, rows, cols, tlen = cur.unpack(TABLE_HEAD)
    table = cur.take(tlen)
    counters = Counters(*cur.unpack(COUNTERS))
    if cur.pos != len(body):
        raise ArchiveError(f"{what}: {len(body) - cur.pos} trailing bytes")
    return ArchiveSegment(
        interval=tuple(interval),
        filter=filt,
        flows=flows,
        cfg=cfg,
        counters=counters,
        table_blob=table if has_table else None,
        table_codec=codec,
        table_shape=(rows, cols),
        name=name,
    )


def encode_archive(segments: Sequence[ArchiveSegment], flags: int = FLAG_NONE) -> bytes:
    bodies = [encode_segment(s) for s in segments]
    head = HEADER.pack(MAGIC, FORMAT_VERSION, flags, len(bodies))
    head += CHECKSUM.pack(checksum(head))
    offset = len(head) + ENTRY.size * len(bodies) + CHECKSUM.size
    entries = b""
    for body in bodies:
        entries += ENTRY.pack(offset, len(body), checksum(body))
        offset += len(body)
    return head + entries + CHECKSUM.pack(checksum(entries)) + b"".join(bodies)


def write_archive(segments: Sequence[ArchiveSegment], path) -> None:
    """Write segments to ``path`` atomically; nothing is left behind on failure."""
    path = Path(path)
    data = encode_archive(segments)
    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
        tmp = None
    except OSError as exc:
        raise OSError(f"cannot write archive {path}: {exc}") from exc
    finally:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)


def decode_archive(data: bytes, source: str = "archive") -> list[ArchiveSegment]:
    if len(data) < HEADER.size + CHECKSUM.size:
        raise ArchiveError(f"{source}: truncated header")
    magic, version, _flags, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ArchiveError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    (hsum,) = CHECKSUM.unpack_from(data, HEADER.size)
    if hsum != checksum(data[: HEADER.size]):
        raise ChecksumError(f"{source}: header checksum mismatch")
    if version != FORMAT_VERSION:
        raise ArchiveError(f"{source}: unsupported format version {version}")

    dir_start = HEADER.size + CHECKSUM.size
    dir_end = dir_start + ENTRY.size * count
    if len(data) < dir_end + CHECKSUM.size:
        raise ArchiveError(f"{source}: truncated directory")
    entries = data[dir_start:dir_end]
    (dsum,) = CHECKSUM.unpack_from(data, dir_end)
    if dsum != checksum(entries):
        raise ChecksumError(f"{source}: directory checksum mismatch")

    segments = []
    for i in range(count):
        offset, length, expected = ENTRY.unpack_from(entries, i * ENTRY.size)
        what = f"{source}: segment {i}"
        if offset + length > len(data):
            raise ArchiveError(f"{what}: truncated")
        body = data[offset : offset + length]
        if checksum(body) != expected:
            raise ChecksumError(f"{what}: checksum mismatch")
        segments.append(decode_segment(body, what))
    end = dir_end + CHECKSUM.size + sum(ENTRY.unpack_from(entries, i * ENTRY.size)[1] for i in range(count))
    if len(data) != end:
        raise ArchiveError(f"{source}: {len(data) - end} unexpected trailing bytes")
    return segments


def read_archive(path) -> list[ArchiveSegment]:
    """Load and verify every segment; index tables stay compressed until queried."""
    return decode_archive(Path(path).read_bytes(), str(path))
