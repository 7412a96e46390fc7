"""Combine accumulated host labels into application detections.

Set matching is a pure post-processing step over immutable snapshots: the
rules can be edited and re-evaluated without re-analyzing traffic, as long as
they reference labels the analysis emitted.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import IO, Iterable

from .analyzer import AnalysisSnapshot
from .model import SetRule

REPORT_CSV_HEADER = "host_ip,app_id,app_name,n_required_matched,n_optional_matched"


@dataclass(frozen=True)
class Detection:
    """One application detected on one host, with the witnessing labels."""

    app_id: str
    app_name: str
    matched_required: frozenset[str]
    matched_optional: frozenset[str]


@dataclass
class DetectionReport:
    """Detections per host, plus the rule fingerprint and snapshot time."""

    hosts: dict[str, list[Detection]] = field(default_factory=dict)
    ruleset_hash: str = ""
    snapshot_time: float | None = None

    def detected_apps(self, client: str) -> set[str]:
        return {d.app_id for d in self.hosts.get(client, [])}

    def to_json_dict(self) -> dict:
        return {
            "hosts": {
                ip: [
                    {
                        "app_id": d.app_id,
                        "app_name": d.app_name,
                        "matched_required": sorted(d.matched_required),
                        "matched_optional": sorted(d.matched_optional),
                    }
                    for d in detections
                ]
                for ip, detections in self.hosts.items()
            },
            "meta": {
                "ruleset_hash": self.ruleset_hash,
                "snapshot_time": self.snapshot_time,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json_dict(cls, data: dict) -> "DetectionReport":
        hosts = {
            ip: [
                Detection(
                    app_id=d["app_id"],
                    app_name=d.get("app_name", d["app_id"]),
                    matched_required=frozenset(d.get("matched_required", [])),
                    matched_optional=frozenset(d.get("matched_optional", [])),
                )
                for d in detections
            ]
            for ip, detections in data.get("hosts", {}).items()
        }
        meta = data.get("meta", {})
        return cls(hosts=hosts, ruleset_hash=meta.get("ruleset_hash", ""),
                   snapshot_time=meta.get("snapshot_time"))

    def write_csv(self, fileobj: IO[str]) -> None:
        fileobj.write(REPORT_CSV_HEADER + "\n")
        for ip in sorted(self.hosts):
            for d in self.hosts[ip]:
                fileobj.write(
                    f"{ip},{d.app_id},{d.app_name},"
                    f"{len(d.matched_required)},{len(d.matched_optional)}\n")


def evaluate_host(labels: set[str], rules: Iterable[SetRule],
                  names: dict[str, str] | None = None) -> list[Detection]:
    """Detections for one host's label set, ordered by app id.

    A rule fires iff all its required labels are present and at least min_opt
    of its optional labels are. Several firing rules for one app merge into a
    single detection with unioned witnesses.
    """
    names = names or {}
    by_app: dict[str, tuple[set[str], set[str]]] = {}
    for rule in rules:
        if not rule.required <= labels:
            continue
        matched_optional = rule.optional & labels
        if len(matched_optional) < rule.min_opt:
            continue
        witness = by_app.setdefault(rule.app_id, (set(), set()))
        witness[0].update(rule.required)
        witness[1].update(matched_optional)
    return [
        Detection(
            app_id=app_id,
            app_name=names.get(app_id, app_id),
            matched_required=frozenset(req),
            matched_optional=frozenset(opt),
        )
        for app_id, (req, opt) in sorted(by_app.items())
    ]


def _rules_fingerprint(rules: Iterable[SetRule], names: dict[str, str]) -> str:
    payload = json.dumps(
        {
            "set_rules": [
                {
                    "required": sorted(r.required),
                    "optional": sorted(r.optional),
                    "min_opt": r.min_opt,
                    "app_id": r.app_id,
                }
                for r in rules
            ],
            "app_names": dict(sorted(names.items())),
        },
        sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def evaluate_all(snap: AnalysisSnapshot, rules: list[SetRule],
                 names: dict[str, str] | None = None) -> DetectionReport:
    """Evaluate every host in the snapshot; hosts with no detections stay listed."""
    names = names or {}
    hosts = {
        ip: evaluate_host(labels, rules, names)
        for ip, labels in snap.label_sets().items()
    }
    return DetectionReport(
        hosts=hosts,
        ruleset_hash=_rules_fingerprint(rules, names),
        snapshot_time=snap.totals.get("latest_timestamp"),
    )
