"""Deterministic heavy-tailed synthetic traffic.

Flow payload sizes follow a discrete bounded Pareto law. The defaults put
roughly two thirds of flows under 2000 bytes while a few large flows carry
most of the bytes. In ``mixed`` mode some flows carry text built from a
Zipf-weighted vocabulary and some packets get runs of zero bytes; the rest
is random. The vocabulary depends only on ``vocab_seed``, so corpora drawn
with different seeds share their common short strings.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from ..flows import FlowKey, PacketRecord, Protocol

CBTR_MAGIC = b"CBTR"
CBTR_VERSION = 1
BASE_TIME_US = 1_700_000_000_000_000
ENTROPY_MODES = ("random", "mixed")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    flow_count: int = 4000  # about 125 MB of payload
    size_shape: float = 0.5
    size_scale: int = 245
    size_max: int = 4_000_000
    payload_entropy: str = "mixed"
    seed: int = 0
    zero_run_flows: float = 0.10
    zero_run_packets: float = 0.25
    zero_run_min: int = 64
    zero_run_max: int = 192
    tcp_fraction: float = 0.81
    mss: int = 1460
    duration_us: int = 60_000_000
    text_flows: float = 0.3
    vocab_size: int = 20_000
    vocab_zipf: float = 1.1
    vocab_seed: int = 0

    def validate(self) -> None:
        if self.flow_count <= 0:
            raise ConfigError("flow_count must be positive")
        if self.size_shape <= 0 or self.size_scale <= 0:
            raise ConfigError("size_shape and size_scale must be positive")
        if self.size_max < self.size_scale:
            raise ConfigError("size_max must be >= size_scale")
        if self.payload_entropy not in ENTROPY_MODES:
            raise ConfigError(f"payload_entropy must be one of {ENTROPY_MODES}")
        if self.mss < 1:
            raise ConfigError("mss must be positive")
        if not 0 <= self.zero_run_min <= self.zero_run_max:
            raise ConfigError("bad zero-run length range")
        if not 0 <= self.text_flows <= 1 or self.vocab_size < 1 or self.vocab_zipf <= 0:
            raise ConfigError("text_flows must be in [0, 1], vocab_size >= 1, vocab_zipf > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown SynthConfig keys: {sorted(unknown)}")
        return cls(**d)


def bounded_pareto_sizes(rng: np.random.Generator, n: int, shape: float, scale: int, upper: int) -> np.ndarray:
    """Inverse-CDF draws from a Pareto(shape, scale) law truncated at ``upper``, floored."""
    if upper == scale:
        return np.full(n, scale, dtype=np.int64)
    u = rng.random(n)
    tail = 1.0 - (scale / upper) ** shape
    x = scale / (1.0 - u * tail) ** (1.0 / shape)
    return np.clip(np.floor(x), scale, upper).astype(np.int64)


class _TextSource:
    """Space-separated words drawn by Zipf rank from a fixed random vocabulary."""

    def __init__(self, size: int, exponent: float, seed: int):
        rng = np.random.default_rng(seed)
        letters = np.frombuffer(b"etaoinshrdlcumwfgypbvkjxqz", dtype=np.uint8)
        freq = 1.0 / np.arange(1, 27) ** 0.9
        lengths = rng.integers(1, 11, size)
        words = [bytes(rng.choice(letters, n, p=freq / freq.sum())) for n in lengths.tolist()]
        self.words = np.array(words, dtype=object)
        cdf = np.cumsum(1.0 / np.arange(1, size + 1) ** exponent)
        self.cdf = cdf / cdf[-1]
        self.mean_len = float(lengths.mean()) + 1

    def text(self, rng: np.random.Generator, size: int) -> bytes:
        out = b""
        while len(out) < size:
            n = int((size - len(out)) / self.mean_len) + 8
            idx = np.searchsorted(self.cdf, rng.random(n), side="right")
            out += b" ".join(self.words[np.minimum(idx, self.cdf.size - 1)].tolist()) + b" "
        return out[:size]


def _flow_keys(rng: np.random.Generator, n: int, tcp_fraction: float) -> list[FlowKey]:
    keys: list[FlowKey] = []
    seen: set[FlowKey] = set()
    while len(keys) < n:
        src = int(rng.integers(0x0A000000, 0x0AFFFFFF))
        dst = int(rng.integers(0xC0A80000, 0xC0A8FFFF))
        sport = int(rng.integers(1024, 65536))
        dport = int(rng.choice([80, 443, 53, 25, 22, 8080, 3306, int(rng.integers(1024, 65536))]))
        proto = Protocol.TCP if rng.random() < tcp_fraction else Protocol.UDP
        key = FlowKey(ipaddress.IPv4Address(src), ipaddress.IPv4Address(dst), sport, dport, proto)
        if key not in seen:
            seen.add(key)
            keys.append(key)
    return keys


def synth_generate(cfg: SynthConfig) -> Iterator[PacketRecord]:
    """Yield the packets of a synthetic corpus in timestamp order."""
    cfg.validate()
    ss = np.random.SeedSequence(cfg.seed)
    layout_ss, content_ss = ss.spawn(2)
    rng = np.random.default_rng(layout_ss)
    sizes = bounded_pareto_sizes(rng, cfg.flow_count, cfg.size_shape, cfg.size_scale, cfg.size_max)
    keys = _flow_keys(rng, cfg.flow_count, cfg.tcp_fraction)
    zero_flows = np.zeros(cfg.flow_count, dtype=bool)
    text_flows = np.zeros(cfg.flow_count, dtype=bool)
    source = None
    if cfg.payload_entropy == "mixed":
        zero_flows = rng.random(cfg.flow_count) < cfg.zero_run_flows
        text_flows = rng.random(cfg.flow_count) < cfg.text_flows
        if text_flows.any():
            source = _TextSource(cfg.vocab_size, cfg.vocab_zipf, cfg.vocab_seed)

    # schedule: each flow starts uniformly in the window; packets follow at a per-flow pace
    counts = -(-sizes // cfg.mss)
    starts = rng.integers(0, cfg.duration_us, cfg.flow_count)
    gaps = rng.exponential(2000.0, cfg.flow_count) + 1.0
    flow_id = np.repeat(np.arange(cfg.flow_count), counts)
    seq = np.arange(flow_id.size) - np.repeat(np.cumsum(counts) - counts, counts)
    times = starts[flow_id] + (seq * gaps[flow_id]).astype(np.int64)
    order = np.lexsort((seq, flow_id, times))

    content = np.random.default_rng(content_ss)
    for i in order.tolist():
        f = int(flow_id[i])
        s = int(seq[i])
        size = int(min(cfg.mss, sizes[f] - s * cfg.mss))
        payload = source.text(content, size) if text_flows[f] else content.bytes(size)
        if zero_flows[f] and content.random() < cfg.zero_run_packets:
            run = int(content.integers(cfg.zero_run_min, cfg.zero_run_max + 1))
            run = min(run, size)
            at = int(content.integers(0, size - run + 1))
            payload = payload[:at] + bytes(run) + payload[at + run :]
        yield PacketRecord(keys[f], payload, BASE_TIME_US + int(times[i]))


def write_corpus(packets: Iterable[PacketRecord], dest) -> int:
    """Dump packets as ``CBTR | version | (flowkey | u32 len | payload)*``.

    Returns the record count. Timestamps are not part of the format.
    """
    count = 0

    def emit(fh: BinaryIO):
        nonlocal count
        fh.write(CBTR_MAGIC + bytes([CBTR_VERSION]))
        for p in packets:
            fh.write(p.flow.to_bytes())
            fh.write(struct.pack("<I", len(p.payload)))
            fh.write(p.payload)
            count += 1

    if hasattr(dest, "write"):
        emit(dest)
    else:
        with open(dest, "wb") as fh:
            emit(fh)
    return count


def read_corpus(path) -> Iterator[PacketRecord]:
    """Read a CBTR dump; packets get their record index as timestamp."""
    data = Path(path).read_bytes()
    if data[:4] != CBTR_MAGIC:
        raise ValueError(f"{path}: not a CBTR corpus")
    if data[4] != CBTR_VERSION:
        raise ValueError(f"{path}: unsupported CBTR version {data[4]}")
    pos = 5
    index = 0
    while pos < len(data):
        version = data[pos]
        if version not in (4, 6):
            raise ValueError(f"{path}: bad flow key at offset {pos}")
        klen = 14 if version == 4 else 38
        key = FlowKey.from_bytes(data[pos : pos + klen])
        pos += klen
        if pos + 4 > len(data):
            raise ValueError(f"{path}: truncated record")
        (plen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + plen > len(data):
            raise ValueError(f"{path}: truncated payload")
        yield PacketRecord(key, data[pos : pos + plen], index)
        pos += plen
        index += 1
