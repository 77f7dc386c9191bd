"""Parsing of raw security-activity reports into normalized findings.

Three wire formats are supported:

* SARIF 2.1.0 (subset) for static analysis tools,
* a documented generic JSON schema (any SAST/DAST/VST tool can adapt to it),
* a dependency-scan JSON schema for third-party vulnerability scanners.

Parsing is pure: a report either yields findings or raises, and never touches
the KB. Report-level failures are atomic (nothing ingested); a single bad
entry inside a generic or dependency report only skips that entry.
"""

from __future__ import annotations

import enum
import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from .errors import MalformedReport, UnknownFormat, UnknownSeverity
from .statements import Severity, Statement, StatementKind


class FormatKind(str, enum.Enum):
    SARIF = "sarif"
    GENERIC_JSON = "generic"
    DEPENDENCY_LIST = "dependency_list"


@dataclass(frozen=True)
class RawReport:
    data: bytes
    pipeline_run_id: str
    received_at: int
    declared_format: Optional[FormatKind] = None
    tool_hint: Optional[str] = None

    def __post_init__(self):
        if not self.data:
            raise MalformedReport("$", "report body is empty")
        if not self.pipeline_run_id:
            raise MalformedReport("$", "pipeline_run_id is required")

    def report_hash(self) -> str:
        return hashlib.sha256(self.data).hexdigest()


@dataclass(frozen=True)
class Location:
    path: Optional[str] = None
    line: Optional[int] = None
    endpoint: Optional[str] = None
    component: Optional[str] = None

    def key(self) -> str:
        if self.path:
            return f"{self.path}#{self.line}" if self.line else self.path
        if self.endpoint:
            return self.endpoint
        return self.component or ""

    def to_payload(self) -> dict[str, Any]:
        return {
            "path": self.path,
            "line": self.line,
            "endpoint": self.endpoint,
            "component": self.component,
        }


@dataclass(frozen=True)
class Finding:
    finding_key: str
    title: str
    description: str
    severity: Severity
    location: Location
    identifiers: frozenset[str]
    tool_name: str
    tool_category: str
    report_ref: tuple[str, str]  # (pipeline_run_id, report_hash)

    def to_statement(self) -> Statement:
        return Statement(
            StatementKind.FINDING_OBSERVED,
            {
                "finding_key": self.finding_key,
                "title": self.title,
                "description": self.description,
                "severity": self.severity.value,
                "location": self.location.to_payload(),
                "identifiers": sorted(self.identifiers),
                "tool_name": self.tool_name,
                "tool_category": self.tool_category,
                "report_ref": {
                    "pipeline_run_id": self.report_ref[0],
                    "report_hash": self.report_ref[1],
                },
            },
        )


@dataclass
class ParsedReport:
    format: FormatKind
    tool_name: str
    report_hash: str
    pipeline_run_id: str
    findings: list[Finding] = field(default_factory=list)
    skipped: int = 0

    def report_statement(self) -> Statement:
        return Statement(
            StatementKind.REPORT_INGESTED,
            {
                "report_hash": self.report_hash,
                "pipeline_run_id": self.pipeline_run_id,
                "format": self.format.value,
                "tool_name": self.tool_name,
            },
        )


_SEVERITY_SYNONYMS = {
    "critical": Severity.CRITICAL,
    "blocker": Severity.CRITICAL,
    "high": Severity.HIGH,
    "major": Severity.HIGH,
    "medium": Severity.MEDIUM,
    "moderate": Severity.MEDIUM,
    "low": Severity.LOW,
    "minor": Severity.LOW,
    "info": Severity.INFO,
    "informational": Severity.INFO,
    "note": Severity.INFO,
}

_SARIF_LEVELS = {
    "error": Severity.HIGH,
    "warning": Severity.MEDIUM,
    "note": Severity.LOW,
    "none": Severity.INFO,
}

_TOKEN_RE = re.compile(r"[^0-9a-z]+")


def parse_severity(value: Any) -> Severity:
    if not isinstance(value, str) or value.lower() not in _SEVERITY_SYNONYMS:
        raise UnknownSeverity(str(value))
    return _SEVERITY_SYNONYMS[value.lower()]


def _title_slug(title: str) -> str:
    return "-".join(t for t in _TOKEN_RE.split(title.lower()) if t)


def detect_format(raw: RawReport) -> FormatKind:
    if raw.declared_format is not None:
        return raw.declared_format
    try:
        doc = json.loads(raw.data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise UnknownFormat(f"not JSON and no declared format: {exc}") from exc
    if isinstance(doc, Mapping):
        if "$schema" in doc or ("version" in doc and "runs" in doc):
            return FormatKind.SARIF
        if isinstance(doc.get("findings"), list):
            return FormatKind.GENERIC_JSON
        if isinstance(doc.get("dependencies"), list):
            return FormatKind.DEPENDENCY_LIST
    raise UnknownFormat("JSON document matches no supported report shape")


def _load_json(raw: RawReport) -> Any:
    try:
        return json.loads(raw.data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedReport("$", f"invalid JSON: {exc}") from exc


def _need(obj: Any, key: str, path: str) -> Any:
    if not isinstance(obj, Mapping) or key not in obj or obj[key] is None:
        raise MalformedReport(f"{path}.{key}")
    return obj[key]


def parse_sarif(raw: RawReport) -> tuple[list[Finding], int]:
    """One finding per runs[].results[]. Severity comes from ``level``:
    error=high, warning=medium, note=low, none or absent=info."""
    doc = _load_json(raw)
    runs = _need(doc, "runs", "$")
    if not isinstance(runs, list):
        raise MalformedReport("$.runs", "must be an array")
    report_hash = raw.report_hash()
    findings = []
    for run_idx, run in enumerate(runs):
        run_path = f"$.runs[{run_idx}]"
        tool = _need(_need(_need(run, "tool", run_path), "driver", f"{run_path}.tool"),
                     "name", f"{run_path}.tool.driver")
        results = run.get("results", [])
        if not isinstance(results, list):
            raise MalformedReport(f"{run_path}.results", "must be an array")
        for res_idx, result in enumerate(results):
            res_path = f"{run_path}.results[{res_idx}]"
            rule_id = _need(result, "ruleId", res_path)
            message = _need(_need(result, "message", res_path), "text", f"{res_path}.message")
            level = result.get("level")
            if level is None:
                severity = Severity.INFO
            elif level in _SARIF_LEVELS:
                severity = _SARIF_LEVELS[level]
            else:
                raise MalformedReport(f"{res_path}.level", f"unknown level {level!r}")
            locations = result.get("locations") or []
            if not locations:
                raise MalformedReport(f"{res_path}.locations", "at least one required")
            physical = _need(locations[0], "physicalLocation", f"{res_path}.locations[0]")
            artifact = _need(physical, "artifactLocation",
                             f"{res_path}.locations[0].physicalLocation")
            uri = _need(artifact, "uri",
                        f"{res_path}.locations[0].physicalLocation.artifactLocation")
            region = physical.get("region") or {}
            line = region.get("startLine")
            if line is not None and (not isinstance(line, int) or line < 1):
                raise MalformedReport(
                    f"{res_path}.locations[0].physicalLocation.region.startLine"
                )
            lines = str(message).splitlines() or [""]
            title = lines[0]
            description = "\n".join(lines[1:]).strip()
            location = Location(path=uri, line=line)
            findings.append(
                Finding(
                    finding_key=f"{tool}:{rule_id}:{location.key()}",
                    title=title,
                    description=description,
                    severity=severity,
                    location=location,
                    identifiers=frozenset({str(rule_id)}),
                    tool_name=str(tool),
                    tool_category="SAST",
                    report_ref=(raw.pipeline_run_id, report_hash),
                )
            )
    return findings, 0


def parse_generic(raw: RawReport) -> tuple[list[Finding], int]:
    """Generic adapter schema; bad entries are skipped, siblings survive."""
    doc = _load_json(raw)
    tool = _need(doc, "tool", "$")
    category = _need(doc, "category", "$")
    if category not in ("SAST", "DAST", "VST"):
        raise MalformedReport("$.category", f"unknown category {category!r}")
    entries = _need(doc, "findings", "$")
    if not isinstance(entries, list):
        raise MalformedReport("$.findings", "must be an array")
    report_hash = raw.report_hash()
    findings = []
    skipped = 0
    for entry in entries:
        try:
            findings.append(_parse_generic_entry(entry, tool, category,
                                                 raw.pipeline_run_id, report_hash))
        except (MalformedReport, UnknownSeverity):
            skipped += 1
    return findings, skipped


def _parse_generic_entry(entry: Any, tool: str, category: str,
                         run_id: str, report_hash: str) -> Finding:
    title = _need(entry, "title", "$.findings[]")
    severity = parse_severity(_need(entry, "severity", "$.findings[]"))
    location = Location(
        path=entry.get("path"),
        line=entry.get("line"),
        endpoint=entry.get("endpoint"),
        component=entry.get("component"),
    )
    if not (location.path or location.endpoint or location.component):
        raise MalformedReport("$.findings[]", "needs path, endpoint or component")
    if location.line is not None and (not isinstance(location.line, int) or location.line < 1):
        raise MalformedReport("$.findings[].line")
    ids = entry.get("ids", [])
    if not isinstance(ids, list) or any(not isinstance(i, str) for i in ids):
        raise MalformedReport("$.findings[].ids")
    return Finding(
        finding_key=f"{tool}:{_title_slug(str(title))}:{location.key()}",
        title=str(title),
        description=str(entry.get("description", "")),
        severity=severity,
        location=location,
        identifiers=frozenset(ids),
        tool_name=str(tool),
        tool_category=category,
        report_ref=(run_id, report_hash),
    )


def parse_dependency_list(raw: RawReport) -> tuple[list[Finding], int]:
    """One finding per (dependency, vulnerability) pair; category VST."""
    doc = _load_json(raw)
    tool = _need(doc, "tool", "$")
    dependencies = _need(doc, "dependencies", "$")
    if not isinstance(dependencies, list):
        raise MalformedReport("$.dependencies", "must be an array")
    report_hash = raw.report_hash()
    findings = []
    skipped = 0
    for dep in dependencies:
        try:
            component = _need(dep, "component", "$.dependencies[]")
            version = _need(dep, "version", "$.dependencies[]")
        except MalformedReport:
            skipped += 1
            continue
        vulns = dep.get("vulns", [])
        if not isinstance(vulns, list):
            skipped += 1
            continue
        pinned = f"{component}@{version}"
        for vuln in vulns:
            try:
                vuln_id = _need(vuln, "id", "$.dependencies[].vulns[]")
                severity = parse_severity(_need(vuln, "severity", "$.dependencies[].vulns[]"))
            except (MalformedReport, UnknownSeverity):
                skipped += 1
                continue
            location = Location(component=pinned)
            findings.append(
                Finding(
                    finding_key=f"{tool}:{vuln_id}:{pinned}",
                    title=f"{vuln_id} in {pinned}",
                    description=str(vuln.get("summary", "")),
                    severity=severity,
                    location=location,
                    identifiers=frozenset({str(vuln_id)}),
                    tool_name=str(tool),
                    tool_category="VST",
                    report_ref=(raw.pipeline_run_id, report_hash),
                )
            )
    return findings, skipped


_PARSERS = {
    FormatKind.SARIF: parse_sarif,
    FormatKind.GENERIC_JSON: parse_generic,
    FormatKind.DEPENDENCY_LIST: parse_dependency_list,
}


def parse_report(raw: RawReport) -> ParsedReport:
    """Detect the format and run the matching parser. Report-level failures
    raise before anything could reach the KB."""
    format_kind = detect_format(raw)
    findings, skipped = _PARSERS[format_kind](raw)
    if findings:
        tool_name = findings[0].tool_name
    else:
        doc = _load_json(raw)
        if format_kind is FormatKind.SARIF:
            runs = doc.get("runs") or [{}]
            tool_name = (runs[0].get("tool", {}).get("driver", {}) or {}).get("name")
        else:
            tool_name = doc.get("tool")
        tool_name = tool_name or raw.tool_hint or "unknown"
    return ParsedReport(
        format=format_kind,
        tool_name=str(tool_name),
        report_hash=raw.report_hash(),
        pipeline_run_id=raw.pipeline_run_id,
        findings=findings,
        skipped=skipped,
    )
