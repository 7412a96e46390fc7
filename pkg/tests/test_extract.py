import json
import random

import pytest

from dnsfp.extract import (
    DomainFilter,
    DomainStatistics,
    ExtractionParams,
    OTHER_APP,
    Whitelist,
    WhitelistError,
    apply_whitelist,
    compute_statistics,
    extract_rules,
    filter_domains,
    generate_cf_rules,
    generate_set_rules,
)
from dnsfp.model import LabeledDnsQueryEvent


def event(process, qname, instance="i1", ts=0.0):
    return LabeledDnsQueryEvent(
        timestamp=ts, client="10.0.0.5", qname=qname, qtype=1,
        process_name=process, process_id=100, instance_id=instance)


def stat(app, domain, unique=True, occurrence=1.0, median=10.0):
    return DomainStatistics(app=app, domain=domain, is_unique=unique,
                            occurrence=occurrence, median_interval=median)


def tag(app, qname, instance="i1", ts=0.0):
    return app, event("p.exe", qname, instance, ts), instance


class TestWhitelist:
    def test_combines_processes_under_one_app(self):
        wl = Whitelist({"teamviewer.exe": "TV", "teamviewer_service.exe": "TV"})
        events = [event("teamviewer.exe", "a.example"),
                  event("TeamViewer_Service.exe", "b.example")]
        tagged = list(apply_whitelist(events, wl))
        assert [app for app, _, _ in tagged] == ["TV", "TV"]

    def test_unknown_process_becomes_other(self):
        wl = Whitelist({"known.exe": "app.known"})
        tagged = list(apply_whitelist([event("randomproc.exe", "a.example")], wl))
        assert tagged[0][0] == OTHER_APP

    def test_empty_whitelist_maps_everything_to_other(self):
        tagged = list(apply_whitelist(
            [event("a.exe", "a.example"), event("b.exe", "b.example")], Whitelist({})))
        assert {app for app, _, _ in tagged} == {OTHER_APP}

    def test_reserved_label_rejected(self):
        with pytest.raises(WhitelistError):
            Whitelist({"proc.exe": OTHER_APP})

    def test_label_with_whitespace_rejected(self):
        with pytest.raises(WhitelistError):
            Whitelist({"proc.exe": "bad label"})


class TestDomainFilter:
    def test_popular_subdomain_dropped(self):
        flt = DomainFilter(popular={"google.com"})
        dropped = {}
        kept = list(filter_domains([tag("A", "scholar.google.com")], flt, dropped))
        assert kept == [] and dropped == {"popular": 1}

    def test_local_suffix_dropped(self):
        flt = DomainFilter(local_suffixes=["lab.internal"])
        dropped = {}
        kept = list(filter_domains([tag("A", "vm3.lab.internal")], flt, dropped))
        assert kept == [] and dropped == {"local": 1}

    def test_unlisted_domain_kept(self):
        flt = DomainFilter(popular={"google.com"}, local_suffixes=["lab.internal"])
        kept = list(filter_domains([tag("A", "update.example-app.com")], flt, {}))
        assert len(kept) == 1

    def test_exact_popular_match_dropped(self):
        flt = DomainFilter(popular={"google.com"})
        assert flt.drop_reason("google.com") == "popular"
        assert flt.drop_reason("notgoogle.com") is None
        assert flt.drop_reason("google.com.evil.example") is None


class TestComputeStatistics:
    def test_occurrence_fraction(self):
        tagged = [tag("A", "base.a.example", f"i{k}") for k in range(4)]
        tagged += [tag("A", "d.a.example", f"i{k}") for k in range(3)]
        rows = {r.domain: r for r in compute_statistics(tagged)}
        assert rows["d.a.example"].occurrence == 0.75
        assert rows["base.a.example"].occurrence == 1.0

    def test_median_interval_from_gaps(self):
        tagged = [tag("A", "d.example", "i1", ts) for ts in (0.0, 10.0, 30.0)]
        rows = compute_statistics(tagged)
        assert rows[0].median_interval == 15.0

    def test_intervals_pooled_across_instances(self):
        tagged = [tag("A", "d.example", "i1", ts) for ts in (0.0, 10.0)]
        tagged += [tag("A", "d.example", "i2", ts) for ts in (100.0, 130.0)]
        rows = compute_statistics(tagged)
        assert rows[0].median_interval == 20.0  # median of [10, 30]

    def test_median_absent_when_never_repeated(self):
        tagged = [tag("A", "d.example", "i1", 5.0), tag("A", "d.example", "i2", 9.0)]
        rows = compute_statistics(tagged)
        assert rows[0].median_interval is None

    def test_unique_versus_other(self):
        tagged = [tag("A", "d.example"), tag(OTHER_APP, "d.example"),
                  tag("A", "own.example")]
        rows = {r.domain: r for r in compute_statistics(tagged)}
        assert rows["d.example"].is_unique is False
        assert rows["own.example"].is_unique is True

    def test_no_rows_for_other(self):
        rows = compute_statistics([tag(OTHER_APP, "d.example")])
        assert rows == []

    def test_unordered_timestamps(self):
        tagged = [tag("A", "d.example", "i1", ts) for ts in (30.0, 0.0, 10.0)]
        rows = compute_statistics(tagged)
        assert rows[0].median_interval == 15.0


class TestGenerateCfRules:
    def test_one_rule_per_domain(self):
        rules = generate_cf_rules([stat("A", "d1.example"), stat("A", "d2.example")])
        assert [(r.domain, r.labels) for r in rules] == [
            ("d1.example", ("A:d1.example",)), ("d2.example", ("A:d2.example",))]
        assert all(r.qtypes == frozenset({1, 28}) for r in rules)

    def test_shared_domain_gets_label_per_app(self):
        rules = generate_cf_rules([stat("A", "d.example", unique=False),
                                   stat("B", "d.example", unique=False)])
        assert len(rules) == 1
        assert rules[0].labels == ("A:d.example", "B:d.example")

    def test_empty(self):
        assert generate_cf_rules([]) == []


class TestGenerateSetRules:
    def test_hand_traced_candidate_procedure(self):
        rows = [
            stat("A", "d1.example", unique=True, occurrence=1.0, median=5.0),
            stat("A", "d2.example", unique=True, occurrence=0.9, median=10.0),
            stat("A", "d3.example", unique=False, occurrence=0.8, median=20.0),
            stat("A", "d4.example", unique=True, occurrence=0.5, median=30.0),
        ]
        rules = generate_set_rules(rows, ExtractionParams())
        assert len(rules) == 1
        rule = rules[0]
        assert rule.required == {"A:d1.example"}
        assert rule.optional == {"A:d2.example", "A:d3.example"}
        # 2^2 enumeration over {0.9, 0.8}: P(X>=2)=0.72>0.5, so min_opt is 2
        assert rule.min_opt == 2

    def test_required_overflow_moves_to_optional(self):
        rows = [stat("A", f"d{i}.example", occurrence=1.0, median=float(i))
                for i in range(5)]
        rules = generate_set_rules(rows, ExtractionParams(max_req_labels=2))
        rule = rules[0]
        assert rule.required == {"A:d0.example", "A:d1.example"}
        assert rule.optional == {f"A:d{i}.example" for i in (2, 3, 4)}

    def test_zero_max_required_overflows_everything(self):
        rows = [stat("A", f"d{i}.example", occurrence=1.0, median=float(i))
                for i in range(3)]
        rules = generate_set_rules(rows, ExtractionParams(max_req_labels=0))
        rule = rules[0]
        assert rule.required == frozenset()
        assert rule.optional == {f"A:d{i}.example" for i in range(3)}
        assert rule.min_opt >= 1

    def test_nonunique_never_required(self):
        rows = [stat("A", "d.example", unique=False, occurrence=1.0, median=1.0)]
        rules = generate_set_rules(rows, ExtractionParams())
        assert rules[0].required == frozenset()
        assert rules[0].optional == {"A:d.example"}

    def test_nonunique_excluded_when_disallowed(self):
        rows = [stat("A", "d.example", unique=False, occurrence=1.0, median=1.0)]
        rules = generate_set_rules(rows, ExtractionParams(allow_opt_nonunique=False))
        assert rules == []

    def test_undefined_median_excluded_from_both_pools(self):
        rows = [stat("A", "d.example", occurrence=1.0, median=None)]
        assert generate_set_rules(rows, ExtractionParams()) == []

    def test_median_threshold(self):
        rows = [stat("A", "slow.example", occurrence=1.0, median=2000.0),
                stat("A", "fast.example", occurrence=1.0, median=10.0)]
        rules = generate_set_rules(rows, ExtractionParams())
        assert rules[0].required == {"A:fast.example"}
        assert rules[0].optional == frozenset()

    def test_min_opt_cap(self):
        rows = [stat("A", f"d{i}.example", unique=False, occurrence=0.9,
                     median=float(i)) for i in range(6)]
        uncapped = generate_set_rules(rows, ExtractionParams())[0]
        capped = generate_set_rules(rows, ExtractionParams(min_opt_cap=4))[0]
        assert uncapped.min_opt == 6  # 0.9^6 = 0.531 > 0.5
        assert capped.min_opt == 4

    def test_skipped_app_reported(self):
        rows = [stat("A", "d.example", occurrence=0.1, median=10.0),
                stat("B", "keep.example", occurrence=1.0, median=10.0)]
        report = {}
        rules = generate_set_rules(rows, ExtractionParams(), report=report)
        assert [r.app_id for r in rules] == ["B"]
        assert report["A"]["required"] == 0 and report["A"]["optional"] == 0

    def test_emitted_rules_satisfy_invariants(self):
        rng = random.Random(31)
        rows = []
        for a in range(6):
            for d in range(rng.randrange(0, 12)):
                rows.append(stat(
                    f"app{a}", f"d{d}.a{a}.example",
                    unique=rng.random() < 0.7,
                    occurrence=rng.choice([0.2, 0.4, 0.6, 0.8, 1.0]),
                    median=rng.choice([5.0, 50.0, 500.0, 5000.0, None]),
                ))
        params = ExtractionParams(max_req_labels=rng.randrange(0, 4),
                                  max_opt_labels=rng.randrange(0, 6))
        unique_domains = {r.domain for r in rows if r.is_unique}
        for rule in generate_set_rules(rows, params):
            assert rule.min_opt <= len(rule.optional)
            assert not rule.required & rule.optional
            assert rule.required or rule.optional
            assert rule.required or rule.min_opt >= 1
            for label in rule.required:
                assert label.split(":", 1)[1] in unique_domains

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            generate_set_rules([], ExtractionParams(min_opt_probability=1.5))
        with pytest.raises(ValueError):
            generate_set_rules([], ExtractionParams(max_req_labels=-1))


class TestExtractRules:
    HEADER = ("frame,timestamp,src_ip,dst_ip,src_port,dst_port,"
              "process_name,process_id,domain\n")

    def _capture(self, tmp_path, name, rows):
        lines = [self.HEADER]
        for i, (ts, process, domain) in enumerate(rows, start=1):
            lines.append(f"{i},{ts},10.0.0.5,10.0.0.53,50000,53,{process},77,{domain}\n")
        path = tmp_path / name
        path.write_text("".join(lines))
        return str(path)

    def test_end_to_end(self, tmp_path):
        paths = []
        for k in range(2):
            rows = [(t, "widget.exe", "api.widget.example") for t in (0, 30, 60)]
            rows += [(t, "widget.exe", "cdn.widget.example") for t in (5, 55)]
            rows += [(20, "browser.exe", "news.google.com")]
            rows += [(25, "browser.exe", "api.widget.example")]
            paths.append(self._capture(tmp_path, f"cap{k}.csv", rows))
        tranco = tmp_path / "tranco.txt"
        tranco.write_text("google.com\n")
        whitelist = Whitelist({"widget.exe": "app.widget"},
                              app_names={"app.widget": "Widget"})
        params = ExtractionParams(tranco_path=str(tranco))
        ruleset, report = extract_rules(paths, whitelist, params)

        domains = {r.domain for r in ruleset.cf_rules}
        assert "news.google.com" not in domains  # filter soundness
        assert "api.widget.example" in domains
        # browser.exe is unlisted, so its use of the api domain kills uniqueness
        api_rule = next(r for r in ruleset.cf_rules if r.domain == "api.widget.example")
        assert api_rule.labels == ("app.widget:api.widget.example",)
        rule = next(r for r in ruleset.set_rules if r.app_id == "app.widget")
        assert "app.widget:api.widget.example" not in rule.required
        assert ruleset.app_names == {"app.widget": "Widget"}
        assert report["dropped_domains"]["popular"] == 2
        assert report["set_rules"] == 1

    def test_deterministic_output(self, tmp_path):
        rows = [(t, "widget.exe", f"d{t % 3}.widget.example") for t in range(20)]
        path = self._capture(tmp_path, "cap.csv", rows)
        whitelist = Whitelist({"widget.exe": "app.widget"})
        rs1, _ = extract_rules([path], whitelist, ExtractionParams())
        rs2, _ = extract_rules([path], whitelist, ExtractionParams())
        from dnsfp.model import rules_to_json_dict
        assert json.dumps(rules_to_json_dict(rs1), sort_keys=True) \
            == json.dumps(rules_to_json_dict(rs2), sort_keys=True)
