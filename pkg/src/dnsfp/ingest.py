"""Parse DNS query events out of capture files and text interchange formats.

Three sources are supported: classic pcap files, a tab-separated interchange
format (``timestamp<TAB>client_ip<TAB>qname<TAB>qtype``), and process-labeled
capture CSVs (one capture session per file). All parsers are streaming
generators; per-source accounting lands in the IngestStats the caller passes
in, and every input packet ends up either emitted or counted as skipped.
"""

from __future__ import annotations

import csv
import ipaddress
from dataclasses import dataclass, field
from typing import IO, Iterator

from .model import (
    DnsQueryEvent,
    DomainError,
    LabeledDnsQueryEvent,
    normalize_domain,
    parse_qtype,
    qtype_name,
)
from .pcap import MalformedPacket, PcapReader, decode_udp_packet, parse_dns_message

SKIP_NON_DNS = "non_dns"
SKIP_RESPONSE = "response"
SKIP_MALFORMED = "malformed"

LABELED_CSV_COLUMNS = (
    "frame", "timestamp", "src_ip", "dst_ip", "src_port", "dst_port",
    "process_name", "process_id", "domain",
)

# Domain/IP normalization caches are cleared past this size so memory stays
# bounded on pathological streams.
_CACHE_LIMIT = 1 << 20


class IngestError(ValueError):
    """A source cannot be ingested at all (bad format, missing columns)."""


@dataclass(slots=True)
class IngestStats:
    """Accounting for one parsed source.

    packets_seen counts input units (pcap records, TSV data lines, CSV rows);
    queries_emitted counts the units that produced events. A multi-question
    DNS packet emits one event per question but counts once here, so
    queries_emitted + sum(skipped) == packets_seen always holds.
    """

    packets_seen: int = 0
    queries_emitted: int = 0
    skipped: dict[str, int] = field(default_factory=dict)
    note: str | None = None

    def skip(self, reason: str) -> None:
        self.skipped[reason] = self.skipped.get(reason, 0) + 1

    @property
    def skipped_total(self) -> int:
        return sum(self.skipped.values())


class _DomainCache:
    """Memoized normalize_domain returning None for invalid names."""

    def __init__(self):
        self._cache: dict[str, str | None] = {}

    def get(self, raw: str) -> str | None:
        cache = self._cache
        hit = cache.get(raw, False)
        if hit is not False:
            return hit
        if len(cache) > _CACHE_LIMIT:
            cache.clear()
        try:
            value: str | None = normalize_domain(raw)
        except DomainError:
            value = None
        cache[raw] = value
        return value


def _canonical_ip(raw: str, cache: dict[str, str | None]) -> str | None:
    hit = cache.get(raw, False)
    if hit is not False:
        return hit
    if len(cache) > _CACHE_LIMIT:
        cache.clear()
    try:
        value: str | None = str(ipaddress.ip_address(raw))
    except ValueError:
        value = None
    cache[raw] = value
    return value


def parse_pcap(source: str | IO[bytes], stats: IngestStats) -> Iterator[DnsQueryEvent]:
    """Yield one event per question of each UDP port-53 query packet.

    The client is the packet's source IP; responses (QR=1) and non-DNS
    traffic are counted as skipped. A truncated record stops the stream with
    a note in stats. Raises PcapFormatError for files this reader cannot read.
    """
    owns = isinstance(source, str)
    fh = open(source, "rb") if owns else source
    try:
        reader = PcapReader(fh)
        domains = _DomainCache()
        for timestamp, frame in reader:
            stats.packets_seen += 1
            try:
                decoded = decode_udp_packet(frame)
                if decoded is None:
                    stats.skip(SKIP_NON_DNS)
                    continue
                src_ip, sport, dport, payload = decoded
                if sport != 53 and dport != 53:
                    stats.skip(SKIP_NON_DNS)
                    continue
                is_response, questions = parse_dns_message(payload)
            except MalformedPacket:
                stats.skip(SKIP_MALFORMED)
                continue
            if is_response:
                stats.skip(SKIP_RESPONSE)
                continue
            if dport != 53 or not questions:
                stats.skip(SKIP_NON_DNS)
                continue
            events = []
            for raw_name, qtype in questions:
                qname = domains.get(raw_name)
                if qname is None or not 1 <= qtype <= 0xFFFF:
                    events = None
                    break
                events.append(DnsQueryEvent(timestamp, src_ip, qname, qtype))
            if events is None:
                stats.skip(SKIP_MALFORMED)
                continue
            stats.queries_emitted += 1
            yield from events
        if reader.truncated:
            stats.note = "file ended mid-record; partial results"
    finally:
        if owns:
            fh.close()


def parse_tsv(source: str | IO[str], stats: IngestStats) -> Iterator[DnsQueryEvent]:
    """Yield events from TSV lines; malformed lines are counted, never fatal.

    Blank lines and lines starting with ``#`` are ignored entirely.
    """
    owns = isinstance(source, str)
    fh = open(source, "r", encoding="utf-8") if owns else source
    domains = _DomainCache()
    ip_cache: dict[str, str | None] = {}
    qtype_cache: dict[str, int | None] = {}
    try:
        for raw_line in fh:
            line = raw_line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            stats.packets_seen += 1
            parts = line.split("\t")
            if len(parts) != 4:
                stats.skip(SKIP_MALFORMED)
                continue
            ts_text, ip_text, name_text, qtype_text = parts
            try:
                timestamp = float(ts_text)
            except ValueError:
                stats.skip(SKIP_MALFORMED)
                continue
            client = _canonical_ip(ip_text, ip_cache)
            qname = domains.get(name_text)
            qtype = qtype_cache.get(qtype_text, -1)
            if qtype == -1:
                try:
                    qtype = parse_qtype(qtype_text)
                except ValueError:
                    qtype = None
                qtype_cache[qtype_text] = qtype
            if timestamp < 0 or client is None or qname is None or qtype is None:
                stats.skip(SKIP_MALFORMED)
                continue
            stats.queries_emitted += 1
            yield DnsQueryEvent(timestamp, client, qname, qtype)
    finally:
        if owns:
            fh.close()


def format_tsv_line(event: DnsQueryEvent) -> str:
    """One TSV line per event; float repr round-trips the timestamp exactly."""
    return f"{event.timestamp!r}\t{event.client}\t{event.qname}\t{qtype_name(event.qtype)}"


def write_tsv(events, fileobj: IO[str]) -> None:
    for event in events:
        fileobj.write(format_tsv_line(event) + "\n")


def parse_labeled_csv(path: str, stats: IngestStats) -> Iterator[LabeledDnsQueryEvent]:
    """Yield labeled events from a process-labeled capture CSV.

    The file is one capture session: every event's instance_id is the path.
    Rows without a domain are non-DNS and skipped; a missing required column
    raises IngestError.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [col for col in LABELED_CSV_COLUMNS if col not in header]
        if missing:
            raise IngestError(f"{path}: missing required columns: {', '.join(missing)}")
        domains = _DomainCache()
        ip_cache: dict[str, str | None] = {}
        instance_id = str(path)
        for row in reader:
            stats.packets_seen += 1
            domain_text = (row.get("domain") or "").strip()
            if not domain_text:
                stats.skip(SKIP_NON_DNS)
                continue
            try:
                timestamp = float(row["timestamp"])
                process_id = int(row["process_id"])
            except (TypeError, ValueError):
                stats.skip(SKIP_MALFORMED)
                continue
            process_name = (row.get("process_name") or "").strip()
            client = _canonical_ip((row.get("src_ip") or "").strip(), ip_cache)
            qname = domains.get(domain_text)
            qtype_text = (row.get("qtype") or "").strip()
            try:
                qtype = parse_qtype(qtype_text) if qtype_text else 1
            except ValueError:
                stats.skip(SKIP_MALFORMED)
                continue
            if timestamp < 0 or not process_name or client is None or qname is None:
                stats.skip(SKIP_MALFORMED)
                continue
            stats.queries_emitted += 1
            yield LabeledDnsQueryEvent(
                timestamp=timestamp, client=client, qname=qname, qtype=qtype,
                process_name=process_name, process_id=process_id,
                instance_id=instance_id)
