"""Score detection reports against ground truth and run parameter sweeps.

Scoring is per (host, app) pair: a detection in the truth is a true positive,
a detection not in the truth a false positive, and a truth entry with no
detection a false negative. The sweep varies the maximum number of required
and optional labels; the traffic is analyzed once with the full label set and
only set matching is re-run per cell, since set rules never need re-analysis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .analyzer import AnalysisSnapshot, analyze, build_index, snapshot
from .extract import (
    DomainFilter,
    ExtractionParams,
    Whitelist,
    apply_whitelist,
    compute_statistics,
    extract_rules,
    filter_domains,
    generate_cf_rules,
    generate_set_rules,
    load_domain_list,
)
from .ingest import IngestStats, parse_labeled_csv
from .model import DnsQueryEvent, RuleSet
from .setmatch import DetectionReport, evaluate_all


class ScenarioMismatchError(ValueError):
    """The report covers hosts the ground truth knows nothing about."""


@dataclass
class ScoreResult:
    per_app: dict[str, dict[str, int]] = field(default_factory=dict)
    totals: dict[str, int] = field(default_factory=lambda: {"tp": 0, "fp": 0, "fn": 0})
    hosts_with_no_detection: int = 0

    def to_json_dict(self) -> dict:
        return {
            "per_app": self.per_app,
            "totals": self.totals,
            "hosts_with_no_detection": self.hosts_with_no_detection,
        }


def score(report: DetectionReport, truth: dict[str, list[str]]) -> ScoreResult:
    """Count tp/fp/fn per app over all (host, app) pairs.

    Hosts present only in the truth contribute their apps as false negatives;
    hosts present only in the report are a scenario mismatch and an error.
    """
    unknown = set(report.hosts) - set(truth)
    if unknown:
        raise ScenarioMismatchError(
            f"report contains hosts missing from ground truth: {sorted(unknown)}")
    result = ScoreResult()

    def bucket(app: str) -> dict[str, int]:
        return result.per_app.setdefault(app, {"tp": 0, "fp": 0, "fn": 0})

    for ip, truth_apps in truth.items():
        detected = report.detected_apps(ip)
        expected = set(truth_apps)
        if not detected:
            result.hosts_with_no_detection += 1
        for app in detected & expected:
            bucket(app)["tp"] += 1
        for app in detected - expected:
            bucket(app)["fp"] += 1
        for app in expected - detected:
            bucket(app)["fn"] += 1
    for counts in result.per_app.values():
        for key in ("tp", "fp", "fn"):
            result.totals[key] += counts[key]
    result.per_app = dict(sorted(result.per_app.items()))
    return result


@dataclass
class SweepResult:
    req_values: list[int]
    opt_values: list[int]
    fp_grid: list[list[int]]
    fn_grid: list[list[int]]
    params: ExtractionParams

    def cell(self, max_req: int, max_opt: int) -> tuple[int, int]:
        i = self.req_values.index(max_req)
        j = self.opt_values.index(max_opt)
        return self.fp_grid[i][j], self.fn_grid[i][j]

    def _grid_csv(self, grid: list[list[int]]) -> str:
        lines = ["req\\opt," + ",".join(str(o) for o in self.opt_values)]
        for r, row in zip(self.req_values, grid):
            lines.append(f"{r}," + ",".join(str(v) for v in row))
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "fp_grid.csv").write_text(self._grid_csv(self.fp_grid), "utf-8")
        (out_dir / "fn_grid.csv").write_text(self._grid_csv(self.fn_grid), "utf-8")
        summary = {
            "req_values": self.req_values,
            "opt_values": self.opt_values,
            "fp": self.fp_grid,
            "fn": self.fn_grid,
            "min_fp": min(min(row) for row in self.fp_grid),
            "min_fn": min(min(row) for row in self.fn_grid),
        }
        (out_dir / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", "utf-8")


def _score_cell(ruleset: RuleSet, snap: AnalysisSnapshot,
                truth: dict[str, list[str]]) -> tuple[int, int]:
    report = evaluate_all(snap, ruleset.set_rules, ruleset.app_names)
    result = score(report, truth)
    return result.totals["fp"], result.totals["fn"]


def sweep(csv_paths: list[str], whitelist: Whitelist,
          scenario_events: Sequence[DnsQueryEvent], truth: dict[str, list[str]],
          base_params: ExtractionParams,
          req_values: Iterable[int], opt_values: Iterable[int],
          reuse_analysis: bool = True) -> SweepResult:
    """fp/fn per (max required, max optional) cell.

    With reuse_analysis, statistics are computed once and the scenario is
    analyzed once against the full per-query rule set (neither depends on the
    swept limits); each cell only regenerates set rules and re-runs set
    matching. Otherwise every cell runs the whole extraction and analysis
    from scratch. Both paths produce identical grids.
    """
    req_values = sorted(set(req_values))
    opt_values = sorted(set(opt_values))
    if not req_values or not opt_values:
        raise ValueError("sweep ranges must be non-empty")
    fp_grid = [[0] * len(opt_values) for _ in req_values]
    fn_grid = [[0] * len(opt_values) for _ in req_values]

    shared_stats = shared_cf = shared_snapshot = None
    if reuse_analysis:
        shared_stats, shared_cf = _extraction_inputs(csv_paths, whitelist, base_params)
        index = build_index(shared_cf)
        shared_snapshot = snapshot(analyze(scenario_events, index))

    for i, max_req in enumerate(req_values):
        for j, max_opt in enumerate(opt_values):
            params = replace(base_params, max_req_labels=max_req,
                             max_opt_labels=max_opt)
            try:
                if reuse_analysis:
                    set_rules = generate_set_rules(shared_stats, params)
                    names = {r.app_id: whitelist.app_names.get(r.app_id, r.app_id)
                             for r in set_rules}
                    ruleset = RuleSet(cf_rules=shared_cf, set_rules=set_rules,
                                      app_names=names)
                    snap = shared_snapshot
                else:
                    ruleset, _ = extract_rules(csv_paths, whitelist, params)
                    index = build_index(ruleset.cf_rules)
                    snap = snapshot(analyze(scenario_events, index))
                fp_grid[i][j], fn_grid[i][j] = _score_cell(ruleset, snap, truth)
            except Exception as exc:
                raise RuntimeError(
                    f"sweep cell (max_req={max_req}, max_opt={max_opt}) failed: {exc}"
                ) from exc
    return SweepResult(req_values=req_values, opt_values=opt_values,
                       fp_grid=fp_grid, fn_grid=fn_grid, params=base_params)


def _extraction_inputs(csv_paths, whitelist, params):
    """Statistics and per-query rules for the sweep's shared analysis."""
    popular = load_domain_list(params.tranco_path) if params.tranco_path else set()
    domain_filter = DomainFilter(popular=popular,
                                 local_suffixes=params.local_domain_suffixes)
    stats_sink = IngestStats()

    def events():
        for path in csv_paths:
            yield from parse_labeled_csv(path, stats_sink)

    rows = compute_statistics(
        filter_domains(apply_whitelist(events(), whitelist), domain_filter))
    return rows, generate_cf_rules(rows)
