"""Reading TCP/UDP payloads out of pcap and pcapng captures."""

from __future__ import annotations

import ipaddress
import logging
from dataclasses import dataclass, field
from typing import Iterator

import dpkt

from ..flows import FlowKey, PacketRecord, Protocol

logger = logging.getLogger(__name__)

# link types we know how to strip down to IP
LINK_ETHERNET = 1
LINK_RAW = 101
LINK_LINUX_SLL = 113
LINK_IPV4 = 228
LINK_IPV6 = 229


@dataclass
class CaptureStats:
    packets: int = 0
    yielded: int = 0
    skipped: dict = field(default_factory=dict)
    malformed: int = 0

    def skip(self, reason: str) -> None:
        self.skipped[reason] = self.skipped.get(reason, 0) + 1


def _open(fh):
    head = fh.read(4)
    fh.seek(0)
    if head == b"\x0a\x0d\x0d\x0a":
        return dpkt.pcapng.Reader(fh)
    return dpkt.pcap.Reader(fh)


def _network_layer(buf: bytes, linktype: int):
    if linktype == LINK_ETHERNET:
        return dpkt.ethernet.Ethernet(buf).data
    if linktype == LINK_LINUX_SLL:
        return dpkt.sll.SLL(buf).data
    if linktype in (LINK_RAW, LINK_IPV4, LINK_IPV6, 12, 14):
        version = buf[0] >> 4 if buf else 0
        if version == 4:
            return dpkt.ip.IP(buf)
        if version == 6:
            return dpkt.ip6.IP6(buf)
        return None
    raise ValueError(f"unsupported link type {linktype}")


def read_capture(path, stats: CaptureStats | None = None) -> Iterator[PacketRecord]:
    """Yield one record per TCP/UDP packet with a non-empty payload.

    Non-IP frames, other transports and empty payloads are counted in
    ``stats.skipped``; frames that fail to decode count as malformed.
    """
    stats = stats if stats is not None else CaptureStats()
    with open(path, "rb") as fh:
        reader = _open(fh)
        linktype = reader.datalink()
        for ts, buf in reader:
            stats.packets += 1
            try:
                net = _network_layer(buf, linktype)
            except (dpkt.UnpackError, IndexError, ValueError) as exc:
                if isinstance(exc, ValueError) and "link type" in str(exc):
                    raise
                stats.malformed += 1
                continue
            if isinstance(net, dpkt.ip.IP):
                src, dst = ipaddress.IPv4Address(net.src), ipaddress.IPv4Address(net.dst)
                proto = net.p
            elif isinstance(net, dpkt.ip6.IP6):
                src, dst = ipaddress.IPv6Address(net.src), ipaddress.IPv6Address(net.dst)
                proto = net.nxt
            else:
                stats.skip("non-ip")
                continue
            seg = net.data
            if proto == Protocol.TCP and isinstance(seg, dpkt.tcp.TCP):
                kind = Protocol.TCP
            elif proto == Protocol.UDP and isinstance(seg, dpkt.udp.UDP):
                kind = Protocol.UDP
            elif proto in (Protocol.TCP, Protocol.UDP):
                stats.malformed += 1
                continue
            else:
                stats.skip("other-transport")
                continue
            payload = bytes(seg.data)
            if not payload:
                stats.skip("empty-payload")
                continue
            stats.yielded += 1
            yield PacketRecord(FlowKey(src, dst, seg.sport, seg.dport, kind), payload, int(round(ts * 1e6)))
    logger.info("capture %s: %d packets, %d yielded, %d malformed, skipped %s",
                path, stats.packets, stats.yielded, stats.malformed, stats.skipped)
