"""Core data model: domain names, query types, rules, and rule-file IO.

Rule files are JSON with an explicit schema version. Two rule kinds exist:
per-query rules (``cf_rules``) that match a single DNS query by exact domain
and query type and emit labels, and label-set rules (``set_rules``) that imply
an application once a host has accumulated all required labels plus a minimum
number of optional labels.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable

MAX_NAME_LENGTH = 253
MAX_LABEL_LENGTH = 63

# Sentinel query-type code meaning "match every type". 0 is not a valid RR
# type, so it cannot collide with a concrete code.
WILDCARD_QTYPE = 0

RULE_FILE_VERSION = 1

_QTYPE_NAMES = {
    1: "A",
    2: "NS",
    5: "CNAME",
    6: "SOA",
    12: "PTR",
    15: "MX",
    16: "TXT",
    28: "AAAA",
    33: "SRV",
    35: "NAPTR",
    41: "OPT",
    43: "DS",
    46: "RRSIG",
    47: "NSEC",
    48: "DNSKEY",
    64: "SVCB",
    65: "HTTPS",
    255: "ANY",
    257: "CAA",
}
_QTYPE_CODES = {name: code for code, name in _QTYPE_NAMES.items()}


class DomainError(ValueError):
    """A domain name failed normalization."""


class RuleFileError(ValueError):
    """A rule file could not be parsed or violates a rule invariant."""


def normalize_domain(raw: str) -> str:
    """Normalize a DNS name: lowercase, strip one trailing dot, validate.

    Idempotent. Raises DomainError for empty names, empty labels, labels over
    63 characters, names over 253 characters, or non-printable characters.
    """
    name = raw.lower()
    if name.endswith("."):
        name = name[:-1]
    if not name:
        raise DomainError(f"empty domain name: {raw!r}")
    if len(name) > MAX_NAME_LENGTH:
        raise DomainError(f"domain name longer than {MAX_NAME_LENGTH}: {raw!r}")
    for label in name.split("."):
        if not label:
            raise DomainError(f"empty label in domain name: {raw!r}")
        if len(label) > MAX_LABEL_LENGTH:
            raise DomainError(f"label longer than {MAX_LABEL_LENGTH}: {raw!r}")
        for ch in label:
            if not ("!" <= ch <= "~"):
                raise DomainError(f"invalid character {ch!r} in domain name: {raw!r}")
    return name


def parse_qtype(text: str, allow_wildcard: bool = False) -> int:
    """Parse a query type: a mnemonic like ``A``, ``TYPE<code>``, or a decimal code.

    ``*`` parses to the wildcard sentinel when allow_wildcard is set.
    """
    token = text.strip().upper()
    if token == "*":
        if allow_wildcard:
            return WILDCARD_QTYPE
        raise ValueError("wildcard query type not allowed here")
    code = _QTYPE_CODES.get(token)
    if code is None:
        digits = token[4:] if token.startswith("TYPE") else token
        if not digits.isdigit():
            raise ValueError(f"unknown query type: {text!r}")
        code = int(digits)
    if not 1 <= code <= 0xFFFF:
        raise ValueError(f"query type code out of range: {text!r}")
    return code


def qtype_name(code: int) -> str:
    """Canonical string for a query-type code (``*`` for the wildcard)."""
    if code == WILDCARD_QTYPE:
        return "*"
    return _QTYPE_NAMES.get(code, f"TYPE{code}")


def valid_label(label: str) -> bool:
    """Labels are opaque non-empty tokens without whitespace or commas."""
    if not label or "," in label:
        return False
    return not any(ch.isspace() for ch in label)


@dataclass(slots=True)
class DnsQueryEvent:
    """One observed DNS query. qname is normalized; qtype is a concrete code."""

    timestamp: float
    client: str
    qname: str
    qtype: int


@dataclass(slots=True)
class LabeledDnsQueryEvent:
    """A DNS query attributed to the process that produced it.

    instance_id identifies the capture session the event came from; occurrence
    statistics are computed per instance.
    """

    timestamp: float
    client: str
    qname: str
    qtype: int
    process_name: str
    process_id: int
    instance_id: str


@dataclass(frozen=True)
class CfRule:
    """Per-query rule: exact domain plus query types, emitting one or more labels."""

    domain: str
    qtypes: frozenset[int]
    labels: tuple[str, ...]

    def matches_qtype(self, qtype: int) -> bool:
        return WILDCARD_QTYPE in self.qtypes or qtype in self.qtypes


@dataclass(frozen=True)
class SetRule:
    """Label-set rule: fires when required ⊆ labels and ≥ min_opt optional labels match."""

    required: frozenset[str]
    optional: frozenset[str]
    min_opt: int
    app_id: str


@dataclass
class RuleSet:
    """A loaded rule file: per-query rules, set rules, and app display names."""

    cf_rules: list[CfRule] = field(default_factory=list)
    set_rules: list[SetRule] = field(default_factory=list)
    app_names: dict[str, str] = field(default_factory=dict)


def _check_set_rule(required: frozenset[str], optional: frozenset[str],
                    min_opt: int, app_id: str, where: str) -> SetRule:
    if not app_id:
        raise RuleFileError(f"{where}: empty app_id")
    for label in required | optional:
        if not valid_label(label):
            raise RuleFileError(f"{where}: invalid label {label!r}")
    if required & optional:
        raise RuleFileError(
            f"{where}: labels in both required and optional: {sorted(required & optional)}")
    if not required and not optional:
        raise RuleFileError(f"{where}: rule has no labels at all")
    if min_opt < 0:
        raise RuleFileError(f"{where}: negative min_opt")
    if min_opt > len(optional):
        raise RuleFileError(
            f"{where}: min_opt {min_opt} exceeds {len(optional)} optional labels")
    if min_opt == 0 and not required:
        raise RuleFileError(f"{where}: min_opt 0 with no required labels would always fire")
    return SetRule(required=required, optional=optional, min_opt=min_opt, app_id=app_id)


def _parse_cf_rule(obj: dict, where: str) -> CfRule:
    try:
        domain = normalize_domain(str(obj["domain"]))
    except KeyError:
        raise RuleFileError(f"{where}: missing domain") from None
    except DomainError as exc:
        raise RuleFileError(f"{where}: {exc}") from None
    raw_qtypes = obj.get("qtypes")
    if not raw_qtypes:
        raise RuleFileError(f"{where}: empty qtypes")
    try:
        qtypes = frozenset(parse_qtype(str(q), allow_wildcard=True) for q in raw_qtypes)
    except ValueError as exc:
        raise RuleFileError(f"{where}: {exc}") from None
    if WILDCARD_QTYPE in qtypes:
        qtypes = frozenset({WILDCARD_QTYPE})
    labels = tuple(str(lb) for lb in obj.get("labels", []))
    if not labels:
        raise RuleFileError(f"{where}: empty label list")
    for label in labels:
        if not valid_label(label):
            raise RuleFileError(f"{where}: invalid label {label!r}")
    return CfRule(domain=domain, qtypes=qtypes, labels=labels)


def _merge_cf_rules(rules: Iterable[CfRule]) -> list[CfRule]:
    # Duplicate (domain, qtypes) entries collapse into one rule; differing
    # label lists are unioned preserving first-seen order.
    merged: dict[tuple[str, frozenset[int]], list[str]] = {}
    for rule in rules:
        key = (rule.domain, rule.qtypes)
        if key not in merged:
            merged[key] = list(rule.labels)
        else:
            seen = merged[key]
            for label in rule.labels:
                if label not in seen:
                    seen.append(label)
    return [CfRule(domain=d, qtypes=q, labels=tuple(labels))
            for (d, q), labels in merged.items()]


def parse_rules(data: dict) -> RuleSet:
    """Build a RuleSet from decoded rule-file JSON, enforcing all invariants."""
    version = data.get("version")
    if version != RULE_FILE_VERSION:
        raise RuleFileError(f"unsupported rule file version: {version!r}")
    cf_rules = [_parse_cf_rule(obj, f"cf_rules[{i}]")
                for i, obj in enumerate(data.get("cf_rules", []))]
    set_rules = []
    for i, obj in enumerate(data.get("set_rules", [])):
        where = f"set_rules[{i}]"
        required = frozenset(str(lb) for lb in obj.get("required", []))
        optional = frozenset(str(lb) for lb in obj.get("optional", []))
        min_opt = obj.get("min_opt", 0)
        if not isinstance(min_opt, int) or isinstance(min_opt, bool):
            raise RuleFileError(f"{where}: min_opt must be an integer")
        app_id = str(obj.get("app_id", ""))
        set_rules.append(_check_set_rule(required, optional, min_opt, app_id, where))
    app_names = {str(k): str(v) for k, v in data.get("app_names", {}).items()}
    return RuleSet(cf_rules=_merge_cf_rules(cf_rules), set_rules=set_rules,
                   app_names=app_names)


def load_rules(path) -> RuleSet:
    """Load and validate a rule file; raises RuleFileError with position info."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise RuleFileError(
                f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
            ) from None
    if not isinstance(data, dict):
        raise RuleFileError(f"{path}: rule file must be a JSON object")
    try:
        return parse_rules(data)
    except RuleFileError as exc:
        raise RuleFileError(f"{path}: {exc}") from None


def rules_to_json_dict(rs: RuleSet) -> dict:
    """Canonical JSON form of a rule set (deterministic field and value order)."""
    return {
        "version": RULE_FILE_VERSION,
        "cf_rules": [
            {
                "domain": rule.domain,
                "qtypes": [qtype_name(c) for c in sorted(rule.qtypes)],
                "labels": list(rule.labels),
            }
            for rule in rs.cf_rules
        ],
        "set_rules": [
            {
                "required": sorted(rule.required),
                "optional": sorted(rule.optional),
                "min_opt": rule.min_opt,
                "app_id": rule.app_id,
            }
            for rule in rs.set_rules
        ],
        "app_names": dict(sorted(rs.app_names.items())),
    }


def save_rules(rs: RuleSet, path) -> None:
    """Write a rule file; identical rule sets produce byte-identical files."""
    text = json.dumps(rules_to_json_dict(rs), indent=2, sort_keys=True) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def ruleset_fingerprint(rs: RuleSet) -> str:
    """Stable SHA-256 over the canonical serialization, for report metadata."""
    text = json.dumps(rules_to_json_dict(rs), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def validate_rules(rs: RuleSet) -> list[str]:
    """Warn about labels referenced by set rules but emitted by no per-query rule.

    Dangling labels are warnings, not errors: set rules may be reconfigured
    after analysis and only lose the missing signal.
    """
    emitted: set[str] = set()
    for rule in rs.cf_rules:
        emitted.update(rule.labels)
    referencing: dict[str, list[str]] = {}
    for rule in rs.set_rules:
        for label in (rule.required | rule.optional) - emitted:
            referencing.setdefault(label, []).append(rule.app_id)
    return [
        f"label {label!r} (referenced by {', '.join(sorted(set(apps)))}) "
        "is emitted by no cf_rule"
        for label, apps in sorted(referencing.items())
    ]
