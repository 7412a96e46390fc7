"""Command-line entry point wiring the pipeline stages together.

One executable, subcommand per stage: synth -> extract -> analyze -> report,
plus score and sweep for evaluation. Human-readable output goes to stderr;
machine-readable artifacts go to files or stdout. Exit codes: 0 success,
1 internal error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import analyzer, evaluate, extract, ingest, model, setmatch, synth
from .pcap import PcapFormatError

log = logging.getLogger("dnsfp")

ENV_OUT_DIR = "DNSFP_OUT_DIR"

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2

_PARAM_KEYS = (
    "max_req_labels", "max_opt_labels", "min_req_occurrence", "min_opt_occurrence",
    "min_opt_probability", "max_req_median", "max_opt_median", "allow_opt_nonunique",
    "min_opt_cap",
)


class CliInputError(ValueError):
    """Bad flags, missing files, or unusable inputs; exits with code 2."""


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise CliInputError(f"cannot read config file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CliInputError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise CliInputError("config file must be a JSON object")
    return data


def _merged(args: argparse.Namespace, config: dict, key: str, default):
    """Precedence: explicit flag > config file > default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _warn_unknown_config_keys(config: dict, known: set[str]) -> None:
    for key in sorted(set(config) - known):
        log.warning("ignoring unknown config key: %r", key)


def _out_dir(args: argparse.Namespace, config: dict) -> Path:
    default = os.environ.get(ENV_OUT_DIR, ".")
    return Path(_merged(args, config, "out_dir", default))


def _extraction_params(args: argparse.Namespace, config: dict) -> extract.ExtractionParams:
    defaults = extract.ExtractionParams()
    kwargs = {key: _merged(args, config, key, getattr(defaults, key))
              for key in _PARAM_KEYS}
    params = extract.ExtractionParams(
        tranco_path=_merged(args, config, "tranco", None),
        local_domain_suffixes=list(getattr(args, "local_suffix", None)
                                   or config.get("local_suffix", [])),
        **kwargs,
    )
    try:
        params.validate()
    except ValueError as exc:
        raise CliInputError(str(exc)) from None
    return params


def _require_files(*paths) -> None:
    for path in paths:
        if path is not None and not Path(path).exists():
            raise CliInputError(f"no such file: {path}")


def cmd_extract(args: argparse.Namespace, config: dict) -> int:
    _require_files(args.whitelist, *(args.csvs or []), args.tranco)
    if not args.csvs:
        raise CliInputError("at least one labeled capture CSV is required")
    whitelist = extract.load_whitelist(args.whitelist)
    params = _extraction_params(args, config)
    ruleset, report = extract.extract_rules(args.csvs, whitelist, params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save_rules(ruleset, out)
    if args.report:
        Path(args.report).write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", "utf-8")
    log.info("wrote %d per-query rules and %d set rules to %s",
             len(ruleset.cf_rules), len(ruleset.set_rules), out)
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace, config: dict) -> int:
    sources = [s for s in (args.pcap, args.tsv) if s] + (["-"] if args.stdin else [])
    if len(sources) != 1:
        raise CliInputError("exactly one of --pcap, --tsv, --stdin is required")
    _require_files(args.rules, args.pcap, args.tsv)
    ruleset = model.load_rules(args.rules)
    for warning in model.validate_rules(ruleset):
        log.warning("%s", warning)
    index = analyzer.build_index(ruleset.cf_rules)
    stats = ingest.IngestStats()
    if args.pcap:
        events = ingest.parse_pcap(args.pcap, stats)
    elif args.tsv:
        events = ingest.parse_tsv(args.tsv, stats)
    else:
        events = ingest.parse_tsv(sys.stdin, stats)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    written = 0

    def write_periodic(snap: analyzer.AnalysisSnapshot) -> None:
        nonlocal written
        written += 1
        path = out.with_name(f"{out.stem}-{written:05d}{out.suffix or '.json'}")
        path.write_text(snap.to_json(), "utf-8")
        log.info("periodic snapshot: %s", path)

    periodic = args.snapshot_every > 0 or args.snapshot_seconds > 0
    dictionary = analyzer.analyze_queued(
        events, index,
        snapshot_every_events=args.snapshot_every,
        snapshot_every_seconds=args.snapshot_seconds,
        on_snapshot=write_periodic if periodic else None,
    )
    out.write_text(analyzer.snapshot(dictionary).to_json(), "utf-8")
    if stats.note:
        log.warning("%s", stats.note)
    log.info("processed %d packets, emitted %d, skipped %s; snapshot: %s",
             stats.packets_seen, stats.queries_emitted, stats.skipped or 0, out)
    return EXIT_OK


def cmd_report(args: argparse.Namespace, config: dict) -> int:
    _require_files(args.snapshot, args.rules)
    ruleset = model.load_rules(args.rules)
    for warning in model.validate_rules(ruleset):
        log.warning("%s", warning)
    with open(args.snapshot, "r", encoding="utf-8") as fh:
        snap = analyzer.AnalysisSnapshot.from_json_dict(json.load(fh))
    report = setmatch.evaluate_all(snap, ruleset.set_rules, ruleset.app_names)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            if args.format == "csv":
                report.write_csv(fh)
            else:
                fh.write(report.to_json())
    elif args.format == "csv":
        report.write_csv(sys.stdout)
    else:
        sys.stdout.write(report.to_json())
    return EXIT_OK


def cmd_synth_training(args: argparse.Namespace, config: dict) -> int:
    _require_files(args.profiles)
    profiles = synth.load_profiles(args.profiles)
    out_dir = Path(args.out_dir)
    paths = synth.generate_training(profiles, args.instances, args.seed,
                                    out_dir, duration=args.duration)
    whitelist_path = out_dir / "whitelist.json"
    whitelist_path.write_text(
        json.dumps(synth.whitelist_mapping(profiles), indent=2, sort_keys=True) + "\n",
        "utf-8")
    log.info("wrote %d capture CSVs and %s", len(paths), whitelist_path)
    return EXIT_OK


def cmd_synth_scenario(args: argparse.Namespace, config: dict) -> int:
    _require_files(args.profiles, args.spec)
    profiles = synth.load_profiles(args.profiles)
    spec = synth.load_scenario(args.spec)
    events, truth = synth.generate_scenario(spec, profiles)
    with open(args.out_tsv, "w", encoding="utf-8") as fh:
        ingest.write_tsv(events, fh)
    synth.save_truth(truth, args.out_truth)
    log.info("wrote %d events to %s; ground truth: %s",
             len(events), args.out_tsv, args.out_truth)
    return EXIT_OK


def cmd_score(args: argparse.Namespace, config: dict) -> int:
    _require_files(args.report, args.truth)
    with open(args.report, "r", encoding="utf-8") as fh:
        report = setmatch.DetectionReport.from_json_dict(json.load(fh))
    truth = synth.load_truth(args.truth)
    result = evaluate.score(report, truth)
    text = json.dumps(result.to_json_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, "utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, config: dict) -> int:
    _require_files(args.whitelist, args.scenario_tsv, args.truth,
                   *(args.csvs or []), args.tranco)
    if not args.csvs:
        raise CliInputError("at least one labeled capture CSV is required")
    whitelist = extract.load_whitelist(args.whitelist)
    params = _extraction_params(args, config)
    stats = ingest.IngestStats()
    events = list(ingest.parse_tsv(args.scenario_tsv, stats))
    truth = synth.load_truth(args.truth)
    result = evaluate.sweep(
        args.csvs, whitelist, events, truth, params,
        req_values=range(args.req_min, args.req_max + 1),
        opt_values=range(args.opt_min, args.opt_max + 1),
        reuse_analysis=not args.no_reuse,
    )
    out_dir = _out_dir(args, config)
    result.write(out_dir)
    log.info("sweep grids written to %s", out_dir)
    return EXIT_OK


def _add_param_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("extraction parameters")
    group.add_argument("--max-req-labels", type=int, dest="max_req_labels")
    group.add_argument("--max-opt-labels", type=int, dest="max_opt_labels")
    group.add_argument("--min-req-occurrence", type=float, dest="min_req_occurrence")
    group.add_argument("--min-opt-occurrence", type=float, dest="min_opt_occurrence")
    group.add_argument("--min-opt-probability", type=float, dest="min_opt_probability")
    group.add_argument("--max-req-median", type=float, dest="max_req_median")
    group.add_argument("--max-opt-median", type=float, dest="max_opt_median")
    group.add_argument("--allow-opt-nonunique", action=argparse.BooleanOptionalAction,
                       dest="allow_opt_nonunique")
    group.add_argument("--min-opt-cap", type=int, dest="min_opt_cap")
    group.add_argument("--tranco", help="popular-domains list, one per line")
    group.add_argument("--local-suffix", action="append", dest="local_suffix",
                       help="local domain suffix to drop (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dnsfp",
        description="Fingerprint software on network hosts from passive DNS traffic.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--config", help="JSON config file; flags take precedence")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="derive rules from labeled capture CSVs")
    p.add_argument("csvs", nargs="*", metavar="CSV")
    p.add_argument("--whitelist", required=True)
    p.add_argument("--out", default="rules.json")
    p.add_argument("--report", help="write the extraction report JSON here")
    _add_param_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("analyze", help="match traffic against rules")
    p.add_argument("--pcap")
    p.add_argument("--tsv")
    p.add_argument("--stdin", action="store_true")
    p.add_argument("--rules", required=True)
    p.add_argument("--out", default="snapshot.json")
    p.add_argument("--snapshot-every", type=int, default=0,
                   help="periodic snapshot every N events (0: final only)")
    p.add_argument("--snapshot-seconds", type=float, default=0.0,
                   help="periodic snapshot every S seconds of event time")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="set-match a snapshot into detections")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="generate synthetic datasets")
    synth_sub = p.add_subparsers(dest="synth_command", required=True)
    t = synth_sub.add_parser("training", help="labeled capture CSVs per app instance")
    t.add_argument("--profiles", required=True)
    t.add_argument("--instances", type=int, default=5)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--duration", type=float, default=3600.0)
    t.add_argument("--out-dir", required=True)
    t.set_defaults(func=cmd_synth_training)
    s = synth_sub.add_parser("scenario", help="query stream plus ground truth")
    s.add_argument("--profiles", required=True)
    s.add_argument("--spec", required=True)
    s.add_argument("--out-tsv", required=True)
    s.add_argument("--out-truth", required=True)
    s.set_defaults(func=cmd_synth_scenario)

    p = sub.add_parser("score", help="score a detection report against ground truth")
    p.add_argument("--report", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("sweep", help="fp/fn grid over label-count limits")
    p.add_argument("csvs", nargs="*", metavar="CSV")
    p.add_argument("--whitelist", required=True)
    p.add_argument("--scenario-tsv", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--req-min", type=int, default=0)
    p.add_argument("--req-max", type=int, default=10)
    p.add_argument("--opt-min", type=int, default=0)
    p.add_argument("--opt-max", type=int, default=10)
    p.add_argument("--no-reuse", action="store_true",
                   help="re-analyze the scenario for every cell (oracle mode)")
    p.add_argument("--out-dir", dest="out_dir")
    _add_param_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose > 1 else (
        logging.INFO if args.verbose else logging.WARNING)
    logging.basicConfig(stream=sys.stderr, level=level, force=True,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _load_config(args.config)
        _warn_unknown_config_keys(config, set(_PARAM_KEYS) | {
            "tranco", "local_suffix", "out_dir"})
        return args.func(args, config)
    except (CliInputError, model.RuleFileError, model.DomainError,
            ingest.IngestError, PcapFormatError, extract.WhitelistError,
            synth.ProfileError, synth.ScenarioError,
            evaluate.ScenarioMismatchError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except json.JSONDecodeError as exc:
        log.error("invalid JSON input: %s", exc)
        return EXIT_INPUT
    except Exception:  # pragma: no cover - internal failure path
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
