"""Reference packet construction for ingest tests: builds classic pcap bytes
from first principles (Ethernet II / IPv4 / IPv6 / UDP / DNS wire layout)."""

from __future__ import annotations

import ipaddress
import struct


def dns_name(name: str) -> bytes:
    out = b""
    for label in name.split("."):
        raw = label.encode("ascii")
        out += bytes([len(raw)]) + raw
    return out + b"\x00"


def dns_query(questions, qr=0, txid=0x1234, raw_question_bytes=None) -> bytes:
    """questions: list of (qname, qtype); raw_question_bytes overrides encoding."""
    flags = (qr << 15) | 0x0100  # RD
    header = struct.pack("!HHHHHH", txid, flags, len(questions), 0, 0, 0)
    if raw_question_bytes is not None:
        return header + raw_question_bytes
    body = b""
    for qname, qtype in questions:
        body += dns_name(qname) + struct.pack("!HH", qtype, 1)
    return header + body


def udp(sport: int, dport: int, payload: bytes) -> bytes:
    return struct.pack("!HHHH", sport, dport, 8 + len(payload), 0) + payload


def ipv4(src: str, dst: str, payload: bytes, proto=17) -> bytes:
    header = struct.pack(
        "!BBHHHBBH4s4s", 0x45, 0, 20 + len(payload), 0, 0, 64, proto, 0,
        ipaddress.IPv4Address(src).packed, ipaddress.IPv4Address(dst).packed)
    return header + payload


def ipv6(src: str, dst: str, payload: bytes, next_header=17) -> bytes:
    header = struct.pack(
        "!IHBB16s16s", 0x60000000, len(payload), next_header, 64,
        ipaddress.IPv6Address(src).packed, ipaddress.IPv6Address(dst).packed)
    return header + payload


def ethernet(payload: bytes, ethertype: int, vlan: int | None = None) -> bytes:
    frame = b"\x02\x00\x00\x00\x00\x01" + b"\x02\x00\x00\x00\x00\x02"
    if vlan is not None:
        frame += struct.pack("!HH", 0x8100, vlan)
    return frame + struct.pack("!H", ethertype) + payload


def udp_query_frame(src="10.0.0.5", dst="10.0.0.53", sport=54321, dport=53,
                    questions=(("update.example-app.com", 1),), qr=0,
                    vlan=None, v6=False, raw_question_bytes=None) -> bytes:
    payload = udp(sport, dport, dns_query(list(questions), qr=qr,
                                          raw_question_bytes=raw_question_bytes))
    if v6:
        return ethernet(ipv6(src, dst, payload), 0x86DD, vlan=vlan)
    return ethernet(ipv4(src, dst, payload), 0x0800, vlan=vlan)


def pcap_bytes(records, magic=0xA1B2C3D4, big_endian=False, network=1,
               nanoseconds=False) -> bytes:
    """records: list of (timestamp, frame bytes)."""
    endian = ">" if big_endian else "<"
    if nanoseconds:
        magic = 0xA1B23C4D
    out = struct.pack(endian + "IHHiIII", magic, 2, 4, 0, 0, 65535, network)
    scale = 1_000_000_000 if nanoseconds else 1_000_000
    for ts, frame in records:
        sec = int(ts)
        frac = round((ts - sec) * scale)
        out += struct.pack(endian + "IIII", sec, frac, len(frame), len(frame))
        out += frame
    return out
