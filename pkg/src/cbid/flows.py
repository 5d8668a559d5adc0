"""Flow identifiers and packet records."""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Union

IPAddress = Union[ipaddress.IPv4Address, ipaddress.IPv6Address]

# Fixed-width record used by the archive flow list: tag | 16 | 16 | port | port | proto
FLOWKEY_RECORD_SIZE = 38


class Protocol(IntEnum):
    TCP = 6
    UDP = 17


@dataclass(frozen=True, order=True)
class FlowKey:
    """Unidirectional transport 5-tuple.

    ``to_bytes`` is the canonical serialization mixed into type-II elements:
    ``version | src | dst | src_port | dst_port | proto``. IPv4 keys take
    14 bytes and IPv6 keys 38; the leading version byte keeps the two
    layouts from colliding.
    """

    src_addr: IPAddress
    dst_addr: IPAddress
    src_port: int
    dst_port: int
    protocol: Protocol

    def __post_init__(self):
        src = ipaddress.ip_address(self.src_addr)
        dst = ipaddress.ip_address(self.dst_addr)
        if src.version != dst.version:
            raise ValueError("src and dst address families differ")
        object.__setattr__(self, "src_addr", src)
        object.__setattr__(self, "dst_addr", dst)
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        for port in (self.src_port, self.dst_port):
            if not 0 <= port <= 0xFFFF:
                raise ValueError(f"port out of range: {port}")

    @property
    def version(self) -> int:
        return self.src_addr.version

    def to_bytes(self) -> bytes:
        return (
            bytes([self.version])
            + self.src_addr.packed
            + self.dst_addr.packed
            + struct.pack("<HHB", self.src_port, self.dst_port, int(self.protocol))
        )

    def to_record(self) -> bytes:
        """Fixed 38-byte form; IPv4 addresses are zero-padded to 16 bytes."""
        width = 16
        return (
            bytes([self.version])
            + self.src_addr.packed.ljust(width, b"\0")
            + self.dst_addr.packed.ljust(width, b"\0")
            + struct.pack("<HHB", self.src_port, self.dst_port, int(self.protocol))
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "FlowKey":
        version = data[0]
        alen = 4 if version == 4 else 16
        if version not in (4, 6) or len(data) != 1 + 2 * alen + 5:
            raise ValueError("malformed flow key")
        src = ipaddress.ip_address(bytes(data[1 : 1 + alen]))
        dst = ipaddress.ip_address(bytes(data[1 + alen : 1 + 2 * alen]))
        sport, dport, proto = struct.unpack("<HHB", data[1 + 2 * alen :])
        return cls(src, dst, sport, dport, Protocol(proto))

    @classmethod
    def from_record(cls, data: bytes) -> "FlowKey":
        if len(data) != FLOWKEY_RECORD_SIZE:
            raise ValueError("flow record must be 38 bytes")
        version = data[0]
        if version not in (4, 6):
            raise ValueError(f"bad address version {version}")
        alen = 4 if version == 4 else 16
        return cls.from_bytes(bytes([version]) + data[1 : 1 + alen] + data[17 : 17 + alen] + data[33:])

    def __str__(self) -> str:
        proto = self.protocol.name.lower()
        if self.version == 6:
            return f"[{self.src_addr}]:{self.src_port}->[{self.dst_addr}]:{self.dst_port}/{proto}"
        return f"{self.src_addr}:{self.src_port}->{self.dst_addr}:{self.dst_port}/{proto}"


@dataclass(frozen=True)
class PacketRecord:
    flow: FlowKey
    payload: bytes
    timestamp: int  # microseconds since epoch
