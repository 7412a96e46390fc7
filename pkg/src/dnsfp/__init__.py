"""Passive DNS software fingerprinting toolkit.

Match rules against observed DNS queries to identify the applications running
on network hosts, extract those rules automatically from process-labeled
traffic, and evaluate the pipeline on synthetic scenarios with known ground
truth.
"""

from .analyzer import (
    AnalysisSnapshot,
    HostLabelDictionary,
    analyze,
    analyze_queued,
    build_index,
    match_event,
    snapshot,
)
from .extract import (
    DomainFilter,
    DomainStatistics,
    ExtractionParams,
    Whitelist,
    apply_whitelist,
    compute_statistics,
    extract_rules,
    filter_domains,
    generate_cf_rules,
    generate_set_rules,
)
from .ingest import IngestStats, parse_labeled_csv, parse_pcap, parse_tsv
from .model import (
    CfRule,
    DnsQueryEvent,
    DomainError,
    LabeledDnsQueryEvent,
    RuleFileError,
    RuleSet,
    SetRule,
    load_rules,
    normalize_domain,
    save_rules,
    validate_rules,
)
from .probability import min_opt_count, poisson_binomial_pmf, poisson_binomial_tail
from .setmatch import Detection, DetectionReport, evaluate_all, evaluate_host
from .evaluate import ScoreResult, SweepResult, score, sweep

__version__ = "0.1.0"
