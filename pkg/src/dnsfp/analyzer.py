"""Per-query rule matching and per-host label accumulation.

The index maps a normalized domain to its (query types, labels) entries, so a
lookup costs the same no matter how many rules are loaded. Matching folds
events into a per-client dictionary of labels with counts and first/last-seen
timestamps; hosts whose queries never match any rule are still recorded, so
"no detection" statistics stay meaningful. Counts use min/max timestamps and
pure addition, which makes the result independent of event order.
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .model import CfRule, DnsQueryEvent, WILDCARD_QTYPE

# index: qname -> tuple of (qtype frozenset or None for the wildcard, labels)
CfIndex = dict[str, tuple[tuple[frozenset[int] | None, tuple[str, ...]], ...]]

_SENTINEL = object()
_CHUNK = 2048


@dataclass(slots=True)
class _Host:
    # label -> [count, first_seen, last_seen]
    labels: dict[str, list] = field(default_factory=dict)
    queries: int = 0


class HostLabelDictionary:
    """Mutable per-client accumulation of matched labels. Single-owner."""

    def __init__(self):
        self.hosts: dict[str, _Host] = {}
        self.events_processed = 0
        self.events_matched = 0
        self.latest_timestamp: float | None = None

    def host_labels(self, client: str) -> set[str]:
        host = self.hosts.get(client)
        return set(host.labels) if host else set()


@dataclass(frozen=True)
class AnalysisSnapshot:
    """Immutable point-in-time copy of a HostLabelDictionary, as plain data."""

    hosts: dict[str, dict]
    totals: dict

    def label_sets(self) -> dict[str, set[str]]:
        return {ip: set(info["labels"]) for ip, info in self.hosts.items()}

    def to_json_dict(self) -> dict:
        return {"hosts": self.hosts, "totals": self.totals}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json_dict(cls, data: dict) -> "AnalysisSnapshot":
        return cls(hosts=data.get("hosts", {}), totals=data.get("totals", {}))


def build_index(cf_rules: Iterable[CfRule]) -> CfIndex:
    """Build the domain-keyed lookup structure from validated rules.

    Entries with identical (domain, qtypes) merge their labels; distinct
    qtype sets on one domain stay separate entries under the same key.
    """
    grouped: dict[str, dict[frozenset[int], list[str]]] = {}
    for rule in cf_rules:
        by_qtypes = grouped.setdefault(rule.domain, {})
        labels = by_qtypes.setdefault(rule.qtypes, [])
        for label in rule.labels:
            if label not in labels:
                labels.append(label)
    index: CfIndex = {}
    for domain, by_qtypes in grouped.items():
        entries = []
        for qtypes, labels in by_qtypes.items():
            matcher = None if WILDCARD_QTYPE in qtypes else qtypes
            entries.append((matcher, tuple(labels)))
        index[domain] = tuple(entries)
    return index


def match_event(index: CfIndex, event: DnsQueryEvent,
                dictionary: HostLabelDictionary) -> list[str]:
    """Match one event and update the dictionary; returns the labels recorded.

    A label emitted by several matching entries is counted once per entry.
    Non-matching events still register the client as an active host.
    """
    dictionary.events_processed += 1
    timestamp = event.timestamp
    latest = dictionary.latest_timestamp
    if latest is None or timestamp > latest:
        dictionary.latest_timestamp = timestamp
    hosts = dictionary.hosts
    host = hosts.get(event.client)
    if host is None:
        host = hosts[event.client] = _Host()
    host.queries += 1
    entries = index.get(event.qname)
    if not entries:
        return []
    qtype = event.qtype
    added: list[str] = []
    labels = host.labels
    for qtypes, entry_labels in entries:
        if qtypes is None or qtype in qtypes:
            for label in entry_labels:
                record = labels.get(label)
                if record is None:
                    labels[label] = [1, timestamp, timestamp]
                else:
                    record[0] += 1
                    if timestamp < record[1]:
                        record[1] = timestamp
                    elif timestamp > record[2]:
                        record[2] = timestamp
                added.append(label)
    if added:
        dictionary.events_matched += 1
    return added


def analyze(events: Iterable[DnsQueryEvent], index: CfIndex) -> HostLabelDictionary:
    """Fold match_event over a stream of events."""
    dictionary = HostLabelDictionary()
    for event in events:
        match_event(index, event, dictionary)
    return dictionary


def snapshot(dictionary: HostLabelDictionary) -> AnalysisSnapshot:
    """Consistent point-in-time copy; later matching does not mutate it.

    The snapshot timestamp is data-derived (latest event timestamp seen), so
    serialized snapshots are reproducible run to run.
    """
    hosts = {
        ip: {
            "labels": {
                label: {"count": rec[0], "first_seen": rec[1], "last_seen": rec[2]}
                for label, rec in host.labels.items()
            },
            "queries": host.queries,
        }
        for ip, host in dictionary.hosts.items()
    }
    totals = {
        "events_processed": dictionary.events_processed,
        "events_matched": dictionary.events_matched,
        "hosts": len(hosts),
        "latest_timestamp": dictionary.latest_timestamp,
    }
    return AnalysisSnapshot(hosts=hosts, totals=totals)


def analyze_queued(events: Iterable[DnsQueryEvent], index: CfIndex,
                   queue_chunks: int = 64,
                   snapshot_every_events: int = 0,
                   snapshot_every_seconds: float = 0.0,
                   on_snapshot: Callable[[AnalysisSnapshot], None] | None = None,
                   ) -> HostLabelDictionary:
    """Producer/consumer analysis over a bounded queue.

    The producer thread runs the parser and blocks when the queue is full
    (backpressure); the consumer owns the dictionary. Periodic snapshots fire
    every N events and/or every S seconds of event time (both deterministic),
    via on_snapshot.
    """
    inbox: queue.Queue = queue.Queue(maxsize=queue_chunks)

    def produce() -> None:
        chunk: list[DnsQueryEvent] = []
        try:
            for event in events:
                chunk.append(event)
                if len(chunk) >= _CHUNK:
                    inbox.put(chunk)
                    chunk = []
        finally:
            if chunk:
                inbox.put(chunk)
            inbox.put(_SENTINEL)

    producer = threading.Thread(target=produce, name="dnsfp-ingest", daemon=True)
    producer.start()
    dictionary = HostLabelDictionary()
    since_snapshot = 0
    next_snapshot_time: float | None = None
    while True:
        chunk = inbox.get()
        if chunk is _SENTINEL:
            break
        for event in chunk:
            match_event(index, event, dictionary)
            if on_snapshot is None:
                continue
            due = False
            if snapshot_every_events > 0:
                since_snapshot += 1
                if since_snapshot >= snapshot_every_events:
                    due = True
            if snapshot_every_seconds > 0:
                if next_snapshot_time is None:
                    next_snapshot_time = event.timestamp + snapshot_every_seconds
                elif event.timestamp >= next_snapshot_time:
                    due = True
            if due:
                on_snapshot(snapshot(dictionary))
                since_snapshot = 0
                if snapshot_every_seconds > 0:
                    next_snapshot_time = event.timestamp + snapshot_every_seconds
    producer.join()
    return dictionary
