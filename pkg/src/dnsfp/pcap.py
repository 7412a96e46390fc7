"""Classic pcap reading and DNS query extraction.

Supports the libpcap file format only (both byte orders, microsecond and
nanosecond timestamp variants), link type Ethernet II with optional 802.1Q
VLAN tags, IPv4/IPv6, and UDP port 53. Question names are decompressed per
the DNS message format; compression loops abort the packet as malformed.
"""

from __future__ import annotations

import ipaddress
import socket
import struct

PCAP_MAGIC_USEC = 0xA1B2C3D4
PCAP_MAGIC_NSEC = 0xA1B23C4D
LINKTYPE_ETHERNET = 1

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
ETHERTYPE_VLAN = (0x8100, 0x88A8)

_MAX_POINTER_JUMPS = 32


class PcapFormatError(ValueError):
    """The file is not a classic pcap this reader supports."""


class MalformedPacket(ValueError):
    """A packet's headers or DNS payload could not be parsed."""


def read_question_name(payload: bytes, offset: int) -> tuple[str, int]:
    """Decode a possibly-compressed DNS name; returns (name, offset past it).

    The returned name has no trailing dot and is not yet normalized.
    """
    labels: list[bytes] = []
    end = -1
    pos = offset
    jumps = 0
    total = 0
    size = len(payload)
    while True:
        if pos >= size:
            raise MalformedPacket("name runs past end of message")
        length = payload[pos]
        if length & 0xC0 == 0xC0:
            if pos + 1 >= size:
                raise MalformedPacket("truncated compression pointer")
            if end < 0:
                end = pos + 2
            jumps += 1
            if jumps > _MAX_POINTER_JUMPS:
                raise MalformedPacket("compression pointer loop")
            pos = ((length & 0x3F) << 8) | payload[pos + 1]
        elif length == 0:
            if end < 0:
                end = pos + 1
            break
        elif length & 0xC0:
            raise MalformedPacket("reserved label type")
        else:
            if pos + 1 + length > size:
                raise MalformedPacket("label runs past end of message")
            labels.append(payload[pos + 1:pos + 1 + length])
            total += length + 1
            if total > 255:
                raise MalformedPacket("name too long")
            pos += 1 + length
    try:
        name = b".".join(labels).decode("ascii")
    except UnicodeDecodeError:
        raise MalformedPacket("non-ASCII bytes in name") from None
    return name, end


def parse_dns_message(payload: bytes) -> tuple[bool, list[tuple[str, int]]]:
    """Parse a DNS message header and question section.

    Returns (is_response, [(qname, qtype), ...]). Raises MalformedPacket.
    """
    if len(payload) < 12:
        raise MalformedPacket("short DNS header")
    flags, qdcount = struct.unpack_from("!HH", payload, 2)
    is_response = bool(flags & 0x8000)
    questions: list[tuple[str, int]] = []
    offset = 12
    for _ in range(qdcount):
        name, offset = read_question_name(payload, offset)
        if offset + 4 > len(payload):
            raise MalformedPacket("truncated question entry")
        qtype, _qclass = struct.unpack_from("!HH", payload, offset)
        offset += 4
        questions.append((name, qtype))
    return is_response, questions


def decode_udp_packet(data: bytes) -> tuple[str, int, int, bytes] | None:
    """Strip Ethernet/VLAN/IP/UDP headers from a captured frame.

    Returns (source_ip, source_port, dest_port, udp_payload), or None when the
    frame is not a plain UDP datagram (other protocols, fragments, unhandled
    extension headers). Raises MalformedPacket for frames too short to carry
    the headers they claim.
    """
    if len(data) < 14:
        raise MalformedPacket("short Ethernet frame")
    ethertype = (data[12] << 8) | data[13]
    offset = 14
    while ethertype in ETHERTYPE_VLAN:
        if len(data) < offset + 4:
            raise MalformedPacket("truncated VLAN tag")
        ethertype = (data[offset + 2] << 8) | data[offset + 3]
        offset += 4

    if ethertype == ETHERTYPE_IPV4:
        if len(data) < offset + 20:
            raise MalformedPacket("short IPv4 header")
        ihl = (data[offset] & 0x0F) * 4
        if ihl < 20 or len(data) < offset + ihl:
            raise MalformedPacket("bad IPv4 header length")
        frag = struct.unpack_from("!H", data, offset + 6)[0]
        if frag & 0x3FFF:  # more-fragments flag or nonzero offset
            return None
        if data[offset + 9] != socket.IPPROTO_UDP:
            return None
        src_ip = socket.inet_ntoa(data[offset + 12:offset + 16])
        offset += ihl
    elif ethertype == ETHERTYPE_IPV6:
        if len(data) < offset + 40:
            raise MalformedPacket("short IPv6 header")
        if data[offset + 6] != socket.IPPROTO_UDP:
            return None
        src_ip = str(ipaddress.IPv6Address(data[offset + 8:offset + 24]))
        offset += 40
    else:
        return None

    if len(data) < offset + 8:
        raise MalformedPacket("short UDP header")
    sport, dport = struct.unpack_from("!HH", data, offset)
    return src_ip, sport, dport, data[offset + 8:]


class PcapReader:
    """Iterates (timestamp, frame bytes) records of a classic pcap file."""

    def __init__(self, fileobj):
        header = fileobj.read(24)
        if len(header) < 24:
            raise PcapFormatError("file too short for a pcap header")
        magic = struct.unpack("<I", header[:4])[0]
        if magic == PCAP_MAGIC_USEC:
            self._endian, self._frac = "<", 1e-6
        elif magic == PCAP_MAGIC_NSEC:
            self._endian, self._frac = "<", 1e-9
        else:
            magic_be = struct.unpack(">I", header[:4])[0]
            if magic_be == PCAP_MAGIC_USEC:
                self._endian, self._frac = ">", 1e-6
            elif magic_be == PCAP_MAGIC_NSEC:
                self._endian, self._frac = ">", 1e-9
            else:
                raise PcapFormatError(f"unrecognized pcap magic: 0x{magic:08x}")
        network = struct.unpack(self._endian + "I", header[20:24])[0]
        if network != LINKTYPE_ETHERNET:
            raise PcapFormatError(f"unsupported link type {network}; expected Ethernet")
        self._fh = fileobj
        self.truncated = False

    def __iter__(self):
        unpack = struct.Struct(self._endian + "IIII").unpack
        read = self._fh.read
        frac = self._frac
        while True:
            header = read(16)
            if not header:
                return
            if len(header) < 16:
                self.truncated = True
                return
            ts_sec, ts_frac, incl_len, _orig_len = unpack(header)
            data = read(incl_len)
            if len(data) < incl_len:
                self.truncated = True
                return
            yield ts_sec + ts_frac * frac, data
