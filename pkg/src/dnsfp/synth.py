"""Generate labeled training corpora and analysis scenarios with ground truth.

Application behavior is declared as profiles: per domain, a probability that
an instance queries it at all and a mean interval between queries. Query
times are drawn from a Poisson process, so inter-query gaps are exponential
and exercise the median-interval estimation. All randomness derives from an
explicit seed; identical inputs produce byte-identical outputs.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

from .model import DnsQueryEvent, DomainError, normalize_domain, parse_qtype, qtype_name

TRAINING_START_TIME = 1_700_000_000.0
SCENARIO_START_TIME = 1_710_000_000.0
SERVER_IP = "10.0.0.53"


class ProfileError(ValueError):
    """An application profile is invalid."""


class ScenarioError(ValueError):
    """A scenario specification is invalid or references unknown apps."""


@dataclass(frozen=True)
class DomainBehavior:
    """One domain an application queries: inclusion probability and cadence."""

    domain: str
    probability: float
    mean_interval: float
    qtype: int = 1

    def __post_init__(self):
        if not 0.0 < self.probability <= 1.0:
            raise ProfileError(
                f"{self.domain}: probability must be in (0, 1], got {self.probability}")
        if self.mean_interval <= 0:
            raise ProfileError(
                f"{self.domain}: mean_interval must be positive, got {self.mean_interval}")


@dataclass(frozen=True)
class AppProfile:
    app_id: str
    process_names: tuple[str, ...]
    domains: tuple[DomainBehavior, ...]

    def __post_init__(self):
        if not self.app_id:
            raise ProfileError("empty app_id")
        if not self.process_names:
            raise ProfileError(f"{self.app_id}: no process names")
        if not self.domains:
            raise ProfileError(f"{self.app_id}: no domains")


@dataclass(frozen=True)
class HostSpec:
    ip: str
    installed_apps: tuple[str, ...]
    session_seconds: float

    def __post_init__(self):
        if self.session_seconds <= 0:
            raise ScenarioError(f"{self.ip}: session_seconds must be positive")


@dataclass(frozen=True)
class UserNoise:
    """Per-host browsing noise drawn from the bundled popular-domain sample."""

    sample_count: int = 0
    mean_interval: float = 30.0


@dataclass(frozen=True)
class ScenarioSpec:
    hosts: tuple[HostSpec, ...]
    noise: UserNoise = UserNoise()
    seed: int = 0

    def __post_init__(self):
        ips = [h.ip for h in self.hosts]
        if len(set(ips)) != len(ips):
            raise ScenarioError("host IPs must be distinct")


def profile_from_json_dict(data: dict) -> AppProfile:
    try:
        domains = tuple(
            DomainBehavior(
                domain=normalize_domain(d["domain"]),
                probability=float(d["probability"]),
                mean_interval=float(d["mean_interval"]),
                qtype=parse_qtype(str(d.get("qtype", "A"))),
            )
            for d in data["domains"]
        )
        return AppProfile(
            app_id=str(data["app_id"]),
            process_names=tuple(str(p) for p in data["process_names"]),
            domains=domains,
        )
    except (KeyError, TypeError, ValueError, DomainError) as exc:
        if isinstance(exc, ProfileError):
            raise
        raise ProfileError(f"bad profile entry: {exc}") from None


def load_profiles(path) -> list[AppProfile]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    entries = data["profiles"] if isinstance(data, dict) else data
    return [profile_from_json_dict(entry) for entry in entries]


def save_profiles(profiles: Iterable[AppProfile], path) -> None:
    payload = {
        "profiles": [
            {
                "app_id": p.app_id,
                "process_names": list(p.process_names),
                "domains": [
                    {
                        "domain": d.domain,
                        "probability": d.probability,
                        "mean_interval": d.mean_interval,
                        "qtype": qtype_name(d.qtype),
                    }
                    for d in p.domains
                ],
            }
            for p in profiles
        ]
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def scenario_from_json_dict(data: dict) -> ScenarioSpec:
    try:
        hosts = tuple(
            HostSpec(
                ip=str(h["ip"]),
                installed_apps=tuple(str(a) for a in h["installed_apps"]),
                session_seconds=float(h["session_seconds"]),
            )
            for h in data["hosts"]
        )
        noise_data = data.get("user_noise", {})
        noise = UserNoise(
            sample_count=int(noise_data.get("sample_count", 0)),
            mean_interval=float(noise_data.get("mean_interval", 30.0)),
        )
        return ScenarioSpec(hosts=hosts, noise=noise, seed=int(data.get("seed", 0)))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"bad scenario spec: {exc}") from None


def load_scenario(path) -> ScenarioSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return scenario_from_json_dict(json.load(fh))


def load_noise_domains() -> list[str]:
    """The bundled popular-domain sample, in file order."""
    text = resources.files("dnsfp.data").joinpath("popular_domains.txt").read_text("utf-8")
    return [line.strip() for line in text.splitlines()
            if line.strip() and not line.startswith("#")]


def _derived_rng(seed: int, *parts: object) -> random.Random:
    # random.Random(str) would go through salted hash(); derive sub-seeds
    # explicitly so outputs are stable across processes.
    material = "|".join([str(seed), *map(str, parts)]).encode("utf-8")
    return random.Random(int.from_bytes(hashlib.sha256(material).digest()[:8], "big"))


def _poisson_times(rng: random.Random, mean_interval: float, duration: float,
                   start: float) -> list[float]:
    times = []
    rate = 1.0 / mean_interval
    t = rng.expovariate(rate)
    while t <= duration:
        times.append(start + t)
        t += rng.expovariate(rate)
    return times


def generate_training(profiles: Iterable[AppProfile], instances_per_app: int,
                      seed: int, out_dir, duration: float = 3600.0) -> list[Path]:
    """Write one labeled capture CSV per (app, instance); returns the paths.

    Each instance independently includes each profile domain with its
    probability, then queries it on a Poisson schedule over the session.
    """
    if instances_per_app < 1:
        raise ProfileError("instances_per_app must be at least 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for profile in profiles:
        for instance in range(instances_per_app):
            rng = _derived_rng(seed, "training", profile.app_id, instance)
            client = f"10.{100 + instance}.0.10"
            pids = {name: rng.randrange(1000, 30000) for name in profile.process_names}
            rows = []
            for behavior in profile.domains:
                if rng.random() >= behavior.probability:
                    continue
                for ts in _poisson_times(rng, behavior.mean_interval, duration,
                                         TRAINING_START_TIME):
                    process = rng.choice(profile.process_names)
                    rows.append((ts, client, process, pids[process], behavior.domain))
            rows.sort()
            path = out_dir / f"{profile.app_id}_{instance:03d}.csv"
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write("frame,timestamp,src_ip,dst_ip,src_port,dst_port,"
                         "process_name,process_id,domain\n")
                for frame, (ts, ip, process, pid, domain) in enumerate(rows, start=1):
                    sport = 49152 + (frame % 16000)
                    fh.write(f"{frame},{ts:.6f},{ip},{SERVER_IP},{sport},53,"
                             f"{process},{pid},{domain}\n")
            paths.append(path)
    return paths


def generate_scenario(spec: ScenarioSpec, profiles: Iterable[AppProfile],
                      noise_domains: list[str] | None = None,
                      ) -> tuple[list[DnsQueryEvent], dict[str, list[str]]]:
    """Generate the interleaved query stream and its ground truth.

    Returns (events sorted by timestamp, {ip: sorted installed app ids}).
    Unknown app ids raise ScenarioError.
    """
    by_app = {p.app_id: p for p in profiles}
    if spec.noise.sample_count > 0 and noise_domains is None:
        noise_domains = load_noise_domains()
    events: list[DnsQueryEvent] = []
    truth: dict[str, list[str]] = {}
    for host in spec.hosts:
        truth[host.ip] = sorted(host.installed_apps)
        for app_id in host.installed_apps:
            profile = by_app.get(app_id)
            if profile is None:
                raise ScenarioError(f"{host.ip}: no profile for app {app_id!r}")
            for behavior in profile.domains:
                rng = _derived_rng(spec.seed, "scenario", host.ip, app_id,
                                   behavior.domain)
                if rng.random() >= behavior.probability:
                    continue
                events.extend(
                    DnsQueryEvent(ts, host.ip, behavior.domain, behavior.qtype)
                    for ts in _poisson_times(rng, behavior.mean_interval,
                                             host.session_seconds,
                                             SCENARIO_START_TIME))
        if spec.noise.sample_count > 0:
            rng = _derived_rng(spec.seed, "noise", host.ip)
            count = min(spec.noise.sample_count, len(noise_domains))
            vocabulary = rng.sample(noise_domains, count)
            for ts in _poisson_times(rng, spec.noise.mean_interval,
                                     host.session_seconds, SCENARIO_START_TIME):
                events.append(DnsQueryEvent(ts, host.ip, rng.choice(vocabulary), 1))
    events.sort(key=lambda e: (e.timestamp, e.client, e.qname, e.qtype))
    return events, truth


def whitelist_mapping(profiles: Iterable[AppProfile]) -> dict:
    """JSON-able whitelist covering every profile's process names."""
    processes = {}
    names = {}
    for profile in profiles:
        for process in profile.process_names:
            processes[process] = profile.app_id
        names[profile.app_id] = profile.app_id
    return {"processes": processes, "app_names": names}


def save_truth(truth: dict[str, list[str]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({ip: sorted(apps) for ip, apps in sorted(truth.items())},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_truth(path) -> dict[str, list[str]]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return {str(ip): sorted(str(a) for a in apps) for ip, apps in data.items()}
