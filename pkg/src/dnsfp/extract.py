"""Derive per-query and label-set rules from process-labeled DNS traffic.

The pipeline: map process names to application labels through a whitelist
(everything else becomes ``other``), drop popular-site and local-network
domains, compute per-(app, domain) statistics, then turn those into rules.
Required labels must be unique to their application and seen in enough
capture instances; optional labels are chosen with looser thresholds and
their firing threshold comes from a Poisson-binomial tail probability.
"""

from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .ingest import IngestStats, parse_labeled_csv
from .model import (
    CfRule,
    DomainError,
    LabeledDnsQueryEvent,
    RuleSet,
    SetRule,
    normalize_domain,
    valid_label,
)
from .probability import min_opt_count

log = logging.getLogger(__name__)

OTHER_APP = "other"

# Per-query rules cover both address families; extracted traffic never keys
# on other record types.
CF_RULE_QTYPES = frozenset({1, 28})  # A, AAAA


class WhitelistError(ValueError):
    """The whitelist file is malformed."""


@dataclass
class Whitelist:
    """Process name to application label mapping; unlisted processes map to other."""

    process_to_app: dict[str, str] = field(default_factory=dict)
    app_names: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        normalized = {}
        for process, app in self.process_to_app.items():
            if not app or app == OTHER_APP:
                raise WhitelistError(
                    f"process {process!r} maps to reserved label {app!r}")
            if not valid_label(app):
                raise WhitelistError(f"invalid app label {app!r}")
            normalized[process.lower()] = app
        self.process_to_app = normalized

    def app_for(self, process_name: str) -> str:
        return self.process_to_app.get(process_name.lower(), OTHER_APP)

    @classmethod
    def from_json_dict(cls, data: dict) -> "Whitelist":
        if not isinstance(data, dict) or "processes" not in data:
            raise WhitelistError('whitelist must be an object with a "processes" map')
        return cls(process_to_app=dict(data["processes"]),
                   app_names=dict(data.get("app_names", {})))


def load_whitelist(path) -> Whitelist:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise WhitelistError(f"{path}: parse error: {exc}") from None
    return Whitelist.from_json_dict(data)


def load_domain_list(path) -> set[str]:
    """One registrable domain per line; blanks and # comments ignored."""
    domains: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                domains.add(normalize_domain(text))
            except DomainError:
                log.warning("skipping malformed domain list entry: %r", text)
    return domains


class DomainFilter:
    """Drops popular-site domains (exact or subdomain) and local-suffix domains."""

    def __init__(self, popular: set[str] | None = None,
                 local_suffixes: Iterable[str] = ()):
        self.popular = popular or set()
        self.local_suffixes = [normalize_domain(s) for s in local_suffixes]

    def drop_reason(self, qname: str) -> str | None:
        if self.popular:
            parts = qname.split(".")
            for i in range(len(parts)):
                if ".".join(parts[i:]) in self.popular:
                    return "popular"
        for suffix in self.local_suffixes:
            if qname == suffix or qname.endswith("." + suffix):
                return "local"
        return None


def apply_whitelist(events: Iterable[LabeledDnsQueryEvent], whitelist: Whitelist,
                    ) -> Iterator[tuple[str, LabeledDnsQueryEvent, str]]:
    """Tag each event with its application label and instance id."""
    app_for = whitelist.app_for
    for event in events:
        yield app_for(event.process_name), event, event.instance_id


def filter_domains(tagged: Iterable[tuple[str, LabeledDnsQueryEvent, str]],
                   domain_filter: DomainFilter,
                   dropped: dict[str, int] | None = None,
                   ) -> Iterator[tuple[str, LabeledDnsQueryEvent, str]]:
    """Pass through events whose domain survives the filters, counting drops."""
    for app, event, instance in tagged:
        reason = domain_filter.drop_reason(event.qname)
        if reason is None:
            yield app, event, instance
        elif dropped is not None:
            dropped[reason] = dropped.get(reason, 0) + 1


@dataclass(frozen=True)
class DomainStatistics:
    """Per (application, domain) aggregate driving rule generation.

    occurrence is the fraction of the app's capture instances that queried
    the domain; median_interval is the median gap between consecutive queries
    of the domain within one instance, pooled across instances, and is None
    when no instance queried it twice.
    """

    app: str
    domain: str
    is_unique: bool
    occurrence: float
    median_interval: float | None


def compute_statistics(tagged: Iterable[tuple[str, LabeledDnsQueryEvent, str]],
                       ) -> list[DomainStatistics]:
    """One row per (app, domain) with app != other, sorted for determinism."""
    app_instances: dict[str, set[str]] = {}
    pair_instances: dict[tuple[str, str], set[str]] = {}
    pair_times: dict[tuple[str, str, str], list[float]] = {}
    domain_apps: dict[str, set[str]] = {}

    for app, event, instance in tagged:
        domain_apps.setdefault(event.qname, set()).add(app)
        if app == OTHER_APP:
            continue
        app_instances.setdefault(app, set()).add(instance)
        pair = (app, event.qname)
        pair_instances.setdefault(pair, set()).add(instance)
        pair_times.setdefault((app, event.qname, instance), []).append(event.timestamp)

    intervals: dict[tuple[str, str], list[float]] = {}
    for (app, domain, _instance), times in pair_times.items():
        if len(times) < 2:
            continue
        times.sort()
        gaps = intervals.setdefault((app, domain), [])
        gaps.extend(b - a for a, b in zip(times, times[1:]))

    rows = []
    for (app, domain), instances in sorted(pair_instances.items()):
        gaps = intervals.get((app, domain))
        rows.append(DomainStatistics(
            app=app,
            domain=domain,
            is_unique=domain_apps[domain] == {app},
            occurrence=len(instances) / len(app_instances[app]),
            median_interval=statistics.median(gaps) if gaps else None,
        ))
    return rows


def generate_cf_rules(stats: Iterable[DomainStatistics]) -> list[CfRule]:
    """One rule per distinct domain; a shared domain carries one label per app."""
    by_domain: dict[str, set[str]] = {}
    for row in stats:
        by_domain.setdefault(row.domain, set()).add(row.app)
    return [
        CfRule(domain=domain,
               qtypes=CF_RULE_QTYPES,
               labels=tuple(f"{app}:{domain}" for app in sorted(apps)))
        for domain, apps in sorted(by_domain.items())
    ]


@dataclass
class ExtractionParams:
    """Tunables for set-rule generation, with the evaluated baseline defaults."""

    max_req_labels: int = 4
    max_opt_labels: int = 7
    min_req_occurrence: float = 1.0
    min_opt_occurrence: float = 0.6
    min_opt_probability: float = 0.5
    max_req_median: float = 1400.0
    max_opt_median: float = 1400.0
    allow_opt_nonunique: bool = True
    min_opt_cap: int | None = None
    tranco_path: str | None = None
    local_domain_suffixes: list[str] = field(default_factory=list)

    def validate(self) -> None:
        for name in ("min_req_occurrence", "min_opt_occurrence", "min_opt_probability"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be within [0, 1], got {value}")
        for name in ("max_req_labels", "max_opt_labels"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("max_req_median", "max_opt_median"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.min_opt_cap is not None and self.min_opt_cap < 0:
            raise ValueError("min_opt_cap must be non-negative when set")


def _app_set_rule(app: str, rows: list[DomainStatistics], params: ExtractionParams,
                  ) -> tuple[SetRule | None, dict]:
    usable = [r for r in rows if r.median_interval is not None]
    required_pool = [
        r for r in usable
        if r.is_unique
        and r.occurrence >= params.min_req_occurrence
        and r.median_interval <= params.max_req_median
    ]
    required_domains = {r.domain for r in required_pool}
    optional_pool = [
        r for r in usable
        if r.domain not in required_domains
        and r.occurrence >= params.min_opt_occurrence
        and r.median_interval <= params.max_opt_median
        and (r.is_unique or params.allow_opt_nonunique)
    ]

    by_priority = lambda r: (r.median_interval, r.domain)
    required_sorted = sorted(required_pool, key=by_priority)
    required = required_sorted[:params.max_req_labels]
    # excess required candidates fall through to the optional pool unchanged;
    # they already passed the stricter thresholds
    overflow = required_sorted[params.max_req_labels:]
    optional = sorted(optional_pool + overflow, key=by_priority)[:params.max_opt_labels]

    counts = {
        "required_candidates": len(required_pool),
        "optional_candidates": len(optional_pool),
        "required": len(required),
        "optional": len(optional),
        "min_opt": 0,
    }
    if not required and not optional:
        return None, counts

    min_opt = min_opt_count([r.occurrence for r in optional],
                            params.min_opt_probability)
    if params.min_opt_cap is not None:
        min_opt = min(min_opt, params.min_opt_cap)
    if not required and min_opt == 0:
        # a rule with no prerequisites at all would fire on every host
        min_opt = 1
    counts["min_opt"] = min_opt
    rule = SetRule(
        required=frozenset(f"{app}:{r.domain}" for r in required),
        optional=frozenset(f"{app}:{r.domain}" for r in optional),
        min_opt=min_opt,
        app_id=app,
    )
    return rule, counts


def generate_set_rules(stats: Iterable[DomainStatistics], params: ExtractionParams,
                       report: dict | None = None) -> list[SetRule]:
    """One set rule per application, or none when no label qualifies.

    Apps whose rule would be empty are skipped with a warning; per-app
    candidate counts land in ``report`` when given.
    """
    params.validate()
    by_app: dict[str, list[DomainStatistics]] = {}
    for row in stats:
        by_app.setdefault(row.app, []).append(row)
    rules = []
    for app in sorted(by_app):
        rule, counts = _app_set_rule(app, by_app[app], params)
        if report is not None:
            report[app] = counts
        if rule is None:
            log.warning("app %s: no label qualified for a set rule; skipping", app)
            continue
        rules.append(rule)
    return rules


def extract_rules(csv_paths: list[str], whitelist: Whitelist,
                  params: ExtractionParams) -> tuple[RuleSet, dict]:
    """Full extraction pipeline over labeled capture CSVs.

    Returns the rule set plus a JSON-able report of per-app candidate counts,
    drop counts per filter, and ingest accounting.
    """
    params.validate()
    popular = load_domain_list(params.tranco_path) if params.tranco_path else set()
    domain_filter = DomainFilter(popular=popular,
                                 local_suffixes=params.local_domain_suffixes)
    dropped: dict[str, int] = {}
    ingest_stats = IngestStats()

    def events() -> Iterator[LabeledDnsQueryEvent]:
        for path in csv_paths:
            yield from parse_labeled_csv(path, ingest_stats)

    tagged = filter_domains(apply_whitelist(events(), whitelist),
                            domain_filter, dropped)
    stats = compute_statistics(tagged)
    cf_rules = generate_cf_rules(stats)
    per_app: dict = {}
    set_rules = generate_set_rules(stats, params, report=per_app)
    rule_apps = {rule.app_id for rule in set_rules}
    app_names = {app: whitelist.app_names.get(app, app) for app in sorted(rule_apps)}
    ruleset = RuleSet(cf_rules=cf_rules, set_rules=set_rules, app_names=app_names)
    report = {
        "apps": per_app,
        "skipped_apps": sorted(set(per_app) - rule_apps),
        "dropped_domains": dropped,
        "ingest": {
            "rows_seen": ingest_stats.packets_seen,
            "events_used": ingest_stats.queries_emitted,
            "skipped": ingest_stats.skipped,
        },
        "statistics_rows": len(stats),
        "cf_rules": len(cf_rules),
        "set_rules": len(set_rules),
    }
    return ruleset, report
