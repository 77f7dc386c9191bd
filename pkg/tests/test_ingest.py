"""Format detection, parsers, ingestion atomicity and idempotence."""

import json

import pytest
from hypothesis import given, settings, strategies as st

from conftest import generic_finding, generic_report, load_fixture_bytes, make_raw

from seckb import KnowledgeBase
from seckb.errors import MalformedReport, UnknownFormat
from seckb.ingest import (
    FormatKind,
    detect_format,
    parse_dependency_list,
    parse_generic,
    parse_report,
    parse_sarif,
)
from seckb.statements import Severity, StatementKind, StatementPattern


# --- detect_format ------------------------------------------------------------


def test_sniff_sarif():
    raw = make_raw(b'{"version": "2.1.0", "runs": []}')
    assert detect_format(raw) is FormatKind.SARIF


def test_declared_format_wins():
    raw = make_raw(b'{"version": "2.1.0", "runs": []}', declared=FormatKind.GENERIC_JSON)
    assert detect_format(raw) is FormatKind.GENERIC_JSON


def test_sniff_generic_and_dependency():
    assert detect_format(make_raw(b'{"tool": "t", "findings": []}')) is FormatKind.GENERIC_JSON
    assert detect_format(make_raw(b'{"tool": "t", "dependencies": []}')) is FormatKind.DEPENDENCY_LIST


def test_plain_text_unknown_format():
    with pytest.raises(UnknownFormat):
        detect_format(make_raw(b"hello"))


# --- SARIF ---------------------------------------------------------------------


def test_sarif_fixture_three_findings():
    findings, skipped = parse_sarif(make_raw(load_fixture_bytes("sarif_small.json")))
    assert skipped == 0
    assert len(findings) == 3
    assert [f.severity for f in findings] == [Severity.HIGH, Severity.MEDIUM, Severity.LOW]
    keys = [f.finding_key for f in findings]
    assert len(set(keys)) == 3
    assert findings[0].location.path == "a.c" and findings[0].location.line == 10
    assert findings[0].tool_category == "SAST"
    assert findings[0].tool_name == "clangcheck"


def test_sarif_level_mapping_and_absent_level():
    doc = {
        "version": "2.1.0",
        "runs": [{
            "tool": {"driver": {"name": "t"}},
            "results": [
                {"ruleId": "R", "level": "error", "message": {"text": "a"},
                 "locations": [{"physicalLocation": {"artifactLocation": {"uri": "f"}}}]},
                {"ruleId": "R2", "message": {"text": "b"},
                 "locations": [{"physicalLocation": {"artifactLocation": {"uri": "f"}}}]},
            ],
        }],
    }
    findings, _ = parse_sarif(make_raw(json.dumps(doc).encode()))
    assert findings[0].severity is Severity.HIGH
    assert findings[1].severity is Severity.INFO


def test_sarif_missing_field_names_json_path():
    doc = {
        "version": "2.1.0",
        "runs": [{
            "tool": {"driver": {"name": "t"}},
            "results": [
                {"ruleId": "R", "level": "error",
                 "locations": [{"physicalLocation": {"artifactLocation": {"uri": "f"}}}]},
            ],
        }],
    }
    with pytest.raises(MalformedReport) as excinfo:
        parse_sarif(make_raw(json.dumps(doc).encode()))
    assert "runs[0].results[0].message" in excinfo.value.path


def test_sarif_title_is_first_message_line():
    doc = {
        "version": "2.1.0",
        "runs": [{
            "tool": {"driver": {"name": "t"}},
            "results": [
                {"ruleId": "R", "message": {"text": "headline\nmore detail\nagain"},
                 "locations": [{"physicalLocation": {"artifactLocation": {"uri": "f"}}}]},
            ],
        }],
    }
    findings, _ = parse_sarif(make_raw(json.dumps(doc).encode()))
    assert findings[0].title == "headline"
    assert findings[0].description == "more detail\nagain"


# --- generic -----------------------------------------------------------------------


def test_generic_severity_synonyms():
    report = generic_report("t", "DAST", [
        generic_finding("x", severity="MODERATE", endpoint="/a"),
    ])
    findings, skipped = parse_generic(make_raw(report))
    assert skipped == 0
    assert findings[0].severity is Severity.MEDIUM


def test_generic_missing_location_skips_entry_keeps_siblings():
    report = json.dumps({
        "tool": "t", "category": "DAST",
        "findings": [
            {"title": "no location", "severity": "high"},
            {"title": "ok", "severity": "low", "endpoint": "/fine"},
        ],
    }).encode()
    findings, skipped = parse_generic(make_raw(report))
    assert skipped == 1
    assert len(findings) == 1 and findings[0].title == "ok"


def test_generic_unknown_severity_skips_entry():
    report = generic_report("t", "SAST", [
        generic_finding("weird", severity="apocalyptic", path="a"),
        generic_finding("fine", severity="low", path="b"),
    ])
    findings, skipped = parse_generic(make_raw(report))
    assert skipped == 1 and len(findings) == 1


def test_dast_fixture_two_endpoint_findings():
    findings, skipped = parse_generic(make_raw(load_fixture_bytes("dast_small.json")))
    assert skipped == 0
    assert len(findings) == 2
    assert [f.location.endpoint for f in findings] == ["/login", "/search"]
    assert all(f.tool_category == "DAST" for f in findings)
    assert findings[1].severity is Severity.MEDIUM  # MODERATE synonym


# --- dependency list ------------------------------------------------------------------


def test_dependency_two_vulns_two_findings():
    report = json.dumps({
        "tool": "dep", "dependencies": [
            {"component": "libz", "version": "2.0",
             "vulns": [{"id": "CVE-1", "severity": "high", "summary": "s"},
                        {"id": "CVE-2", "severity": "low", "summary": "s"}]},
        ],
    }).encode()
    findings, skipped = parse_dependency_list(make_raw(report))
    assert len(findings) == 2 and skipped == 0


def test_dependency_empty_vulns_zero_findings():
    report = json.dumps({
        "tool": "dep",
        "dependencies": [{"component": "libz", "version": "2.0", "vulns": []}],
    }).encode()
    findings, skipped = parse_dependency_list(make_raw(report))
    assert findings == [] and skipped == 0


def test_vst_fixture_single_cve_finding():
    findings, skipped = parse_dependency_list(make_raw(load_fixture_bytes("vst_small.json")))
    assert skipped == 0
    assert len(findings) == 1
    finding = findings[0]
    assert finding.identifiers == frozenset({"CVE-2021-0001"})
    assert finding.location.component == "libfoo@1.2"
    assert finding.tool_category == "VST"
    assert finding.severity is Severity.HIGH


# --- ingest into the KB ------------------------------------------------------------------


def test_ingest_sarif_fixture_counts(kb):
    result = kb.ingest_report(make_raw(load_fixture_bytes("sarif_small.json")))
    assert result.findings == 3 and result.skipped == 0
    observed = kb.query(StatementPattern(kind=StatementKind.FINDING_OBSERVED))
    assert len(observed) == 3


def test_ingest_same_bytes_twice_no_new_events(kb):
    data = load_fixture_bytes("sarif_small.json")
    kb.ingest_report(make_raw(data, at=1_000))
    seq_after_first = kb.store.seq
    result = kb.ingest_report(make_raw(data, at=2_000))
    assert result.findings == 3
    assert not result.new_events
    assert kb.store.seq == seq_after_first


def test_ingest_malformed_json_is_atomic(kb):
    seq_before = kb.store.seq
    with pytest.raises(UnknownFormat):
        kb.ingest_report(make_raw(b"not json at all"))
    truncated = load_fixture_bytes("sarif_small.json")[:-40]
    with pytest.raises((MalformedReport, UnknownFormat)):
        kb.ingest_report(make_raw(truncated, declared=FormatKind.SARIF))
    assert kb.store.seq == seq_before


def test_provenance_retention(kb):
    kb.ingest_report(make_raw(load_fixture_bytes("sarif_small.json")))
    kb.ingest_report(make_raw(load_fixture_bytes("dast_small.json"), run_id="run-9"))
    reports = {
        (b.payload["pipeline_run_id"], b.payload["report_hash"])
        for b in kb.store.active(StatementKind.REPORT_INGESTED)
    }
    for belief in kb.store.active(StatementKind.FINDING_OBSERVED):
        ref = belief.payload["report_ref"]
        assert (ref["pipeline_run_id"], ref["report_hash"]) in reports


# --- parser isolation under random corruption ----------------------------------------


def corrupt(entry: dict, mode: int) -> dict:
    broken = dict(entry)
    if mode == 0:
        broken.pop("title", None)
    elif mode == 1:
        broken["severity"] = "catastrophic"
    elif mode == 2:
        broken.pop("path", None)
        broken.pop("endpoint", None)
        broken.pop("component", None)
    elif mode == 3:
        broken["line"] = -5
    return broken


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 3)), min_size=1, max_size=8))
def test_corrupted_entries_never_discard_siblings(plan):
    entries = []
    good = 0
    for index, (is_good, mode) in enumerate(plan):
        entry = generic_finding(f"finding number {index} entirely distinct {index}",
                                severity="low", path=f"f{index}.py")
        if is_good:
            good += 1
            entries.append(entry)
        else:
            entries.append(corrupt(entry, mode))
    report = json.dumps({"tool": "t", "category": "SAST", "findings": entries}).encode()
    findings, skipped = parse_generic(make_raw(report))
    assert len(findings) == good
    assert skipped == len(plan) - good
