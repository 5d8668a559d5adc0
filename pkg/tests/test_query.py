import json
import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cbid.archive import encode_archive
from cbid.digest import ArchiveSegment, Counters, DigestConfig, digest_stream
from cbid.flows import FlowKey, PacketRecord, Protocol
from cbid.index import BitmapIndexTable, FlowList, compress_table
from cbid.partition import PartitionConfig, partition_payload
from cbid.query import ExcerptQuery, appearance_check, excerpt_blocks, flow_determination, investigate

SMALL = PartitionConfig(window_w=8, overlap_o=2, qgram_q=3, threshold_T=0)


def _payload(alphabet: bytes, n: int, seed: int) -> bytes:
    return bytes(np.random.default_rng(seed).choice(list(alphabet), size=n).astype(np.uint8))


@given(
    st.sampled_from([b"\x00\x01", b"abc", bytes(range(256))]),
    st.integers(0, 2**32),
    st.data(),
    st.sampled_from([SMALL, PartitionConfig(threshold_T=0)]),
)
def test_excerpt_blocks_are_payload_blocks(alphabet, seed, data, cfg):
    payload = _payload(alphabet, data.draw(st.integers(1, 900)), seed)
    a = data.draw(st.integers(0, len(payload) - 1))
    b = data.draw(st.integers(a + 1, len(payload)))
    full = {(x.start_offset, x.start_offset + len(x)) for x in partition_payload(payload, cfg)}
    for blk in excerpt_blocks(payload[a:b], cfg):
        assert (a + blk.start_offset, a + blk.start_offset + len(blk)) in full


def test_long_random_excerpt_has_blocks(rng):
    blocks = excerpt_blocks(rng.bytes(400), PartitionConfig())
    assert len(blocks) >= 5
    assert all(6 <= len(b) <= 69 for b in blocks)


def _excerpts(packets, rng, n, length):
    out = []
    big = [p for p in packets if len(p.payload) >= length]
    for i in rng.integers(0, len(big), n):
        p = big[int(i)]
        off = int(rng.integers(0, len(p.payload) - length + 1))
        out.append((p.payload[off : off + length], p.flow))
    return out


@pytest.mark.parametrize("T", [0, 40])
def test_true_carrier_always_reported(small_packets, T, rng):
    cfg = DigestConfig(
        partition=PartitionConfig(threshold_T=T), sections_j=64, interval_raw_budget=400_000, rotation_fp=0.99
    )
    segs = digest_stream(small_packets, cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for length in (30, 120, 200, 500):
            for data, carrier in _excerpts(small_packets, rng, 40, length):
                assert carrier in investigate(data, segs).flows


def test_assumed_positive_reports_every_flow(small_archive):
    seg = small_archive[0]
    data = bytes(20)
    app = appearance_check(data, seg)
    assert app.matched and app.assumed_positive and app.blocks_queried == 0
    with pytest.warns(UserWarning):
        rep = investigate(data, [seg])
    assert rep.flows == set(seg.flows)


def test_time_range_filter(small_archive, small_packets):
    p = small_packets[-1]
    data = p.payload[:200]
    lo, hi = small_archive[0].interval
    rep = investigate(ExcerptQuery(data, start=lo, end=hi), small_archive)
    assert [s.segment for s in rep.segments] == [small_archive[0].name]
    rep = investigate(ExcerptQuery(data, start=small_archive[-1].interval[0]), small_archive)
    assert p.flow in rep.flows
    assert len(rep.segments) == 1


def test_prune_is_subset_and_cheaper(small_archive, small_packets, rng):
    fewer = 0
    for data, _ in _excerpts(small_packets, rng, 30, 200):
        on = investigate(data, small_archive, prune=True)
        off = investigate(data, small_archive, prune=False)
        assert on.flows <= off.flows
        assert on.candidates <= off.candidates
        fewer += on.candidates < off.candidates
    assert fewer > 0


def test_queries_do_not_mutate(small_archive, small_packets, rng):
    before = encode_archive(small_archive)
    for data, _ in _excerpts(small_packets, rng, 10, 200):
        investigate(data, small_archive)
    assert encode_archive(small_archive) == before


def test_empty_archive():
    rep = investigate(b"x" * 300, [])
    assert rep.segments == [] and rep.flows == set()


def test_bloom_layout_exhaustive(small_packets, rng):
    segs = digest_stream(small_packets, DigestConfig(layout="bloom", filter_bits=400_000, interval_raw_budget=10**9))
    for data, carrier in _excerpts(small_packets, rng, 10, 200):
        rep = investigate(data, segs)
        assert carrier in rep.flows
        assert rep.segments[0].sections == []
        assert rep.candidates in (0, len(segs[0].flows))


def test_report_rendering(small_archive, small_packets):
    p = next(p for p in small_packets if len(p.payload) >= 300)
    rep = investigate(p.payload[:300], small_archive)
    d = json.loads(rep.to_json())
    assert d["excerpt_len"] == 300
    assert str(p.flow) in rep.to_table()
    assert any(f["flow"] == str(p.flow) for s in d["segments"] for f in s["flows"])


def test_excerpt_must_be_nonempty():
    with pytest.raises(ValueError):
        ExcerptQuery(b"")


def test_unreadable_table_names_segment(small_archive, small_packets):
    seg = replace(small_archive[0], table_blob=b"garbage", _table=None)
    p = small_packets[0]
    data = next(q.payload[:300] for q in small_packets if len(q.payload) >= 300 and q.timestamp <= seg.interval[1])
    with pytest.raises(OSError, match=seg.name):
        investigate(data, [seg])


def test_three_flow_toy_corpus_is_exact(rng):
    keys = [FlowKey(f"10.0.0.{i}", "10.0.1.1", 2000 + i, 80, Protocol.TCP) for i in range(3)]
    packets = [PacketRecord(keys[i % 3], rng.bytes(1460), i) for i in range(30)]
    # a filter far larger than the load keeps hash collisions out of the picture
    segs = digest_stream(packets, DigestConfig(target_dr=2, sections_j=64, interval_raw_budget=10**6))
    for p in packets[1::3][:5]:
        assert investigate(p.payload[300:700], segs).flows == {keys[1]}


def test_worked_table_limits_type2_queries(rng):
    rows = ["0110010001", "1011011100", "0001100000", "1111011111", "0010101011"]
    flows = FlowList(FlowKey(f"10.0.0.{i}", "10.0.1.1", 1000 + i, 80, Protocol.TCP) for i in range(1, 6))
    table = BitmapIndexTable(10, rows=5)
    for r, bits in enumerate(rows):
        for c, ch in enumerate(bits):
            if ch == "1":
                table.set_bit(r, c)
    blob, cid = compress_table(table)
    cfg = DigestConfig(sections_j=10, partition=PartitionConfig(threshold_T=0))
    seg = ArchiveSegment((0, 0), cfg.new_filter(), flows, cfg, Counters(), blob, cid, (5, 10), "worked")
    excerpt = rng.bytes(400)
    nb = sum(b.kept for b in excerpt_blocks(excerpt, cfg.partition))
    assert nb > 0
    # sections S3, S6, S10 leave flows 1 and 4, the only ones queried
    fd = flow_determination(excerpt, seg, [2, 5, 9])
    assert fd.candidates == 2 and fd.type2_queries == 2 * nb
    fd = flow_determination(excerpt, seg, [2, 5, 9], prune=False)
    assert fd.candidates == 5 and fd.type2_queries == 5 * nb
