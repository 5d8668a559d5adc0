import os
import struct

import numpy as np
import pytest

from cbid.archive import (
    CHECKSUM,
    ENTRY,
    FORMAT_VERSION,
    HEADER,
    ArchiveError,
    ChecksumError,
    checksum,
    decode_archive,
    encode_archive,
    read_archive,
    write_archive,
)
from cbid.digest import DigestConfig, digest_stream
from cbid.flows import FlowKey, PacketRecord, Protocol
from cbid.query import ExcerptQuery, investigate


@pytest.fixture(scope="module")
def tiny(small_packets):
    cfg = DigestConfig(sections_j=16, interval_raw_budget=60_000, rotation_fp=0.99)
    return digest_stream(small_packets[:200], cfg)


def test_empty_archive_fixed_size(tmp_path):
    data = encode_archive([])
    assert len(data) == HEADER.size + 2 * CHECKSUM.size
    assert data[:4] == b"CBID"
    write_archive([], tmp_path / "e.cbid")
    assert read_archive(tmp_path / "e.cbid") == []


def test_round_trip_and_determinism(tiny, tmp_path):
    path = tmp_path / "a.cbid"
    write_archive(tiny, path)
    back = read_archive(path)
    assert back == tiny
    assert encode_archive(back) == path.read_bytes()


def test_header_fields(tiny):
    data = encode_archive(tiny)
    magic, version, flags, count = HEADER.unpack_from(data)
    assert (magic, version, flags, count) == (b"CBID", FORMAT_VERSION, 0, len(tiny))
    off, length, digest = ENTRY.unpack_from(data, HEADER.size + CHECKSUM.size)
    assert checksum(data[off : off + length]) == digest


def test_every_byte_flip_detected(tiny):
    data = encode_archive(tiny[:2])
    rng = np.random.default_rng(0)
    for pos in range(len(data)):
        bad = bytearray(data)
        bad[pos] ^= 1 << int(rng.integers(8))
        with pytest.raises(ArchiveError):
            decode_archive(bytes(bad))


def test_payload_flip_names_segment(tiny):
    data = bytearray(encode_archive(tiny))
    off, length, _ = ENTRY.unpack_from(data, HEADER.size + CHECKSUM.size + ENTRY.size)
    data[off + length // 2] ^= 0xFF
    with pytest.raises(ChecksumError, match="segment 1"):
        decode_archive(bytes(data))


def test_bad_magic(tiny, tmp_path):
    data = bytearray(encode_archive(tiny))
    data[:4] = b"XXXX"
    with pytest.raises(ArchiveError, match="magic"):
        decode_archive(bytes(data))


def test_future_version_rejected():
    head = HEADER.pack(b"CBID", FORMAT_VERSION + 1, 0, 0)
    data = head + CHECKSUM.pack(checksum(head)) + CHECKSUM.pack(checksum(b""))
    with pytest.raises(ArchiveError, match="version"):
        decode_archive(data)


def test_truncation_detected(tiny):
    data = encode_archive(tiny)
    for cut in (3, HEADER.size, HEADER.size + 12, len(data) // 2, len(data) - 1):
        with pytest.raises(ArchiveError):
            decode_archive(data[:cut])
    with pytest.raises(ArchiveError):
        decode_archive(data + b"\0")


def test_write_failure_leaves_nothing(tiny, tmp_path, monkeypatch):
    path = tmp_path / "x.cbid"

    def boom(fd):
        raise OSError("disk full")

    monkeypatch.setattr(os, "fsync", boom)
    with pytest.raises(OSError, match="x.cbid"):
        write_archive(tiny, path)
    assert list(tmp_path.iterdir()) == []


def test_write_to_missing_dir(tiny, tmp_path):
    with pytest.raises(OSError, match="nope"):
        write_archive(tiny, tmp_path / "nope" / "a.cbid")


def test_lazy_table_decompression(tiny, small_packets, tmp_path):
    path = tmp_path / "a.cbid"
    write_archive(tiny, path)
    segs = read_archive(path)
    assert len(segs) > 2
    assert all(s.decompressions == 0 for s in segs)
    target = segs[1]
    p = next(p for p in small_packets if target.interval[0] <= p.timestamp <= target.interval[1] and len(p.payload) >= 300)
    rep = investigate(ExcerptQuery(p.payload[:300], target.interval[0], target.interval[1]), segs)
    assert p.flow in rep.flows
    assert [s.decompressions for s in segs] == [0, 1] + [0] * (len(segs) - 2)


def test_ipv6_flow_round_trip(tmp_path):
    f6 = FlowKey("2001:db8::1", "2001:db8::2", 443, 5555, Protocol.TCP)
    f4 = FlowKey("192.0.2.1", "192.0.2.2", 53, 5353, Protocol.UDP)
    rng = np.random.default_rng(3)
    pk = [PacketRecord(f, rng.bytes(500), i) for i, f in enumerate([f6, f4, f6])]
    segs = digest_stream(pk, DigestConfig(sections_j=16, interval_raw_budget=20_000))
    back = decode_archive(encode_archive(segs))
    assert list(back[0].flows) == [f6, f4]
    assert back == segs


def test_query_answers_survive_round_trip(small_archive, small_packets, rng):
    back = decode_archive(encode_archive(small_archive))
    big = [p for p in small_packets if len(p.payload) >= 200]
    for i in rng.integers(0, len(big), 25):
        data = big[int(i)].payload[:200]
        a, b = investigate(data, small_archive), investigate(data, back)
        assert a.to_dict() == b.to_dict()
