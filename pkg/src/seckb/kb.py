"""Knowledge-base facade: the single entry point applications use.

Wires the event-sourced store, the consistency core and the rule engine
together and exposes commands (ingest a report, submit an assessment, retract
a belief, change rule configuration) and queries (issue views, justification
trees, raw events). All mutating commands are serialized through one writer
lock and run contradiction handling plus fixpoint re-derivation synchronously,
so every read after a completed command sees the revised state.

Timestamps are supplied by callers at this boundary; nothing below ever reads
a wall clock.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from .engine import Delta, InferenceEngine, Rule
from .errors import SecKbError, UnknownBelief, UnknownSubject
from .ingest import ParsedReport, RawReport, parse_report
from .logic import LogicalCore, RevisionReport
from .rules import build_standard_rules, RULE_BUILDERS
from .statements import (
    Severity,
    SourceKind,
    SourceRef,
    Statement,
    StatementKind,
    StatementPattern,
    VALIDATION_STATUSES,
    VERDICTS,
    max_severity,
)
from .store import BeliefStore, EventLog, KBEvent

EVENT_LOG_NAME = "events.jsonl"


class IngestResult:
    def __init__(self, report_belief: str, findings: int, skipped: int, new_events: bool):
        self.report_belief = report_belief
        self.findings = findings
        self.skipped = skipped
        self.new_events = new_events

    def to_json(self) -> dict[str, Any]:
        return {
            "report_belief": self.report_belief,
            "findings": self.findings,
            "skipped": self.skipped,
        }


class KnowledgeBase:
    def __init__(self, data_dir: Optional[Union[str, Path]] = None,
                 rule_config: Optional[Mapping[str, Any]] = None,
                 fsync: bool = False, divergence_bound: int = 10_000,
                 register_standard_rules: bool = True, opened_at: int = 0):
        log_path = Path(data_dir) / EVENT_LOG_NAME if data_dir is not None else None
        self.store = BeliefStore(EventLog(log_path, fsync=fsync))
        self.core = LogicalCore(self.store)
        self.engine = InferenceEngine(self.store, self.core, divergence_bound)
        self._lock = threading.RLock()
        if register_standard_rules:
            self.ensure_standard_rules(rule_config, at=opened_at)

    # --- rule lifecycle ---------------------------------------------------

    def ensure_standard_rules(self, rule_config: Optional[Mapping[str, Any]],
                              at: int) -> Optional[RevisionReport]:
        """Register the standard pack, or bind bodies to registrations already
        in the log. A config that differs from the logged one becomes a
        version bump via replace_rule, so the change itself is on record."""
        with self._lock:
            fresh = build_standard_rules(rule_config)
            needs_fixpoint = False
            sink: list[tuple[str, int]] = []
            replaced: list[str] = []
            for rule in fresh:
                registered = self.store.rules.get(rule.rule_id)
                if registered is None:
                    self.engine.register_rule(rule, at)
                    needs_fixpoint = True
                elif dict(registered.config) != dict(rule.config):
                    bumped = RULE_BUILDERS[rule.rule_id](
                        rule.config, version=registered.version + 1
                    )
                    self.engine.replace_rule(bumped, at, sink=sink)
                    replaced.append(rule.rule_id)
                    needs_fixpoint = True
                else:
                    rebound = RULE_BUILDERS[rule.rule_id](
                        registered.config, version=registered.version
                    )
                    self.engine.bind_body(rebound)
            if needs_fixpoint:
                seed = Delta()
                for belief_id, _ in sink:
                    seed.note_retracted(belief_id)
                self.engine.run_to_fixpoint(seed, at, sink=sink)
            if replaced:
                return RevisionReport(root=f"rule:{'+'.join(replaced)}", retracted=sink)
            return None

    def register_rule(self, rule: Rule, at: int) -> None:
        with self._lock:
            self.engine.register_rule(rule, at)
            self.engine.run_to_fixpoint(Delta(), at)

    def replace_rule(self, rule: Rule, at: int) -> RevisionReport:
        with self._lock:
            sink: list[tuple[str, int]] = []
            self.engine.replace_rule(rule, at, sink=sink)
            seed = Delta()
            for belief_id, _ in sink:
                seed.note_retracted(belief_id)
            self.engine.run_to_fixpoint(seed, at, sink=sink)
            return RevisionReport(root=f"rule:{rule.rule_id}", retracted=sink)

    def replace_rule_config(self, rule_config: Mapping[str, Any], at: int) -> RevisionReport:
        report = self.ensure_standard_rules(rule_config, at)
        return report or RevisionReport(root="rule:unchanged", retracted=[])

    # --- commands ------------------------------------------------------------

    def ingest_report(self, raw: RawReport) -> IngestResult:
        parsed = parse_report(raw)  # pure; report-level failures abort here
        return self.ingest_parsed(parsed, at=raw.received_at)

    def ingest_parsed(self, parsed: ParsedReport, at: int) -> IngestResult:
        source = SourceRef(SourceKind.TOOL_REPORT, f"{parsed.pipeline_run_id}:{parsed.report_hash[:12]}")
        with self._lock:
            seed = Delta()
            report_belief, changed = self.store.assert_explicit(
                parsed.report_statement(), source, at
            )
            if changed:
                seed.note_asserted(report_belief)
            for finding in parsed.findings:
                belief_id, changed = self.store.assert_explicit(
                    finding.to_statement(), source, at
                )
                if changed:
                    seed.note_asserted(belief_id)
            new_events = not seed.is_empty()
            for contradiction in self.core.detect_contradictions(seed.asserted, at):
                self.core.resolve(contradiction, at)
            self.engine.run_to_fixpoint(seed, at)
            return IngestResult(
                report_belief=report_belief,
                findings=len(parsed.findings),
                skipped=parsed.skipped,
                new_events=new_events,
            )

    def submit_assessment(self, subject: Union[str, Sequence[str]], verdict: str,
                          author: str, at: int, rationale: str = "",
                          level: Optional[str] = None) -> tuple[str, RevisionReport]:
        """Record a human verdict and run the revision it causes. ``subject``
        is an issue key, a finding key, or a finding-key pair for
        not_duplicate."""
        if verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {verdict!r}")
        with self._lock:
            payload: dict[str, Any] = {
                "subject": self._resolve_subject(subject, verdict),
                "verdict": verdict,
                "author": author,
                "rationale": rationale,
                "at": at,
            }
            if verdict == "severity_override":
                if level is None:
                    raise ValueError("severity_override needs a level")
                payload["level"] = Severity(level).value
            statement = Statement(StatementKind.ASSESSMENT_MADE, payload)
            source = SourceRef(SourceKind.HUMAN_EXPERT, author)
            sink: list[tuple[str, int]] = []
            belief_id, changed = self.store.assert_explicit(statement, source, at)
            seed = Delta()
            if changed:
                seed.note_asserted(belief_id)
            for contradiction in self.core.detect_contradictions({belief_id}, at):
                self.core.resolve(contradiction, at, sink=sink, base_depth=1)
            for retracted_id, _ in sink:
                seed.note_retracted(retracted_id)
            self.engine.run_to_fixpoint(seed, at, sink=sink)
            return belief_id, RevisionReport(root=belief_id, retracted=sink)

    def _resolve_subject(self, subject: Union[str, Sequence[str]], verdict: str) -> dict[str, Any]:
        if verdict == "not_duplicate":
            if isinstance(subject, str):
                parts = [p for p in subject.split(",") if p]
            else:
                parts = list(subject)
            if len(parts) != 2:
                raise UnknownSubject("not_duplicate needs exactly two finding keys")
            for key in parts:
                if not self.store.active_findings_for_key(key):
                    raise UnknownSubject(f"no active finding {key!r}")
            return {"pair": sorted(parts)}
        if not isinstance(subject, str):
            raise UnknownSubject("subject must be an issue key or finding key")
        issue = self._issue_by_key(subject)
        if issue is not None:
            return {"finding_key": issue.payload["canonical"]}
        if self.store.active_findings_for_key(subject):
            return {"finding_key": subject}
        raise UnknownSubject(f"{subject!r} is neither an active issue key nor a finding key")

    def _issue_by_key(self, issue_key: str):
        belief = self.store.beliefs.get(issue_key)
        if belief is not None and belief.active and belief.kind is StatementKind.ISSUE_EXISTS:
            return belief
        return None

    def retract_belief(self, belief_id: str, reason: str, at: int) -> RevisionReport:
        with self._lock:
            sink: list[tuple[str, int]] = []
            self.core.retract_with_cascade(belief_id, reason, at, base_depth=0, sink=sink)
            report = RevisionReport(root=belief_id, retracted=list(sink))
            seed = Delta()
            seed.note_retracted(belief_id)
            for retracted_id, _ in sink:
                seed.note_retracted(retracted_id)
            self.engine.run_to_fixpoint(seed, at, sink=sink)
            report.retracted = sink
            return report

    # --- queries -----------------------------------------------------------------

    def query(self, pattern: StatementPattern):
        with self._lock:
            return self.store.query(pattern)

    def issue_views(self, status: Optional[str] = None,
                    min_severity: Optional[str] = None,
                    order: str = "rank") -> list[dict[str, Any]]:
        if status is not None and status not in VALIDATION_STATUSES:
            raise ValueError(f"unknown status filter {status!r}")
        if min_severity is not None:
            min_severity = Severity(min_severity).value
        if order not in ("rank", "key"):
            raise ValueError(f"unknown order {order!r}")
        with self._lock:
            members_by_issue: dict[str, list[str]] = {}
            for belief in self.store.active(StatementKind.ISSUE_MEMBER):
                members_by_issue.setdefault(belief.payload["issue"], []).append(
                    belief.payload["finding_key"]
                )
            statuses: dict[str, tuple[str, str]] = {}
            for belief in sorted(self.store.active(StatementKind.VALIDATION_STATUS),
                                 key=lambda b: b.id):
                statuses.setdefault(
                    belief.payload["issue"], (belief.id, belief.payload["status"])
                )
            priorities: dict[str, tuple[str, Mapping[str, Any]]] = {}
            for belief in sorted(self.store.active(StatementKind.PRIORITY_ASSIGNED),
                                 key=lambda b: b.id):
                priorities.setdefault(belief.payload["issue"], (belief.id, belief.payload))

            views = []
            for issue in self.store.active(StatementKind.ISSUE_EXISTS):
                canonical = issue.payload["canonical"]
                members = sorted(members_by_issue.get(canonical, [canonical]))
                observations = [
                    b for key in members for b in self.store.active_findings_for_key(key)
                ]
                if not observations:
                    continue
                representative = min(
                    (b for b in observations if b.payload["finding_key"] == canonical),
                    key=lambda b: b.id,
                    default=min(observations, key=lambda b: b.id),
                )
                severity = max_severity(b.payload["severity"] for b in observations)
                status_entry = statuses.get(canonical)
                priority_entry = priorities.get(canonical)
                reports = sorted(
                    {
                        f'{b.payload["report_ref"]["pipeline_run_id"]}:'
                        f'{b.payload["report_ref"]["report_hash"]}'
                        for b in observations
                    }
                )
                views.append(
                    {
                        "issue_key": issue.id,
                        "title": representative.payload["title"],
                        "max_severity": severity.value if severity else None,
                        "status": status_entry[1] if status_entry else "unreviewed",
                        "score": priority_entry[1]["score"] if priority_entry else None,
                        "rank": priority_entry[1]["rank"] if priority_entry else None,
                        "members": members,
                        "observed_in_reports": reports,
                        # belief ids for justification drill-down in the UI
                        "status_key": status_entry[0] if status_entry else None,
                        "priority_key": priority_entry[0] if priority_entry else None,
                    }
                )

        if status is not None:
            views = [v for v in views if v["status"] == status]
        if min_severity is not None:
            floor = Severity(min_severity).rank
            views = [
                v for v in views
                if v["max_severity"] is not None and Severity(v["max_severity"]).rank >= floor
            ]
        if order == "rank":
            views.sort(key=lambda v: (v["rank"] is None, v["rank"] or 0, v["issue_key"]))
        else:
            views.sort(key=lambda v: v["issue_key"])
        return views

    def issues_json(self, status: Optional[str] = None,
                    min_severity: Optional[str] = None,
                    order: str = "rank") -> bytes:
        """Stable, byte-identical serialization for identical KB states."""
        views = self.issue_views(status=status, min_severity=min_severity, order=order)
        return json.dumps(views, sort_keys=True, separators=(",", ":")).encode("utf-8")

    def justification_tree(self, belief_id: str) -> dict[str, Any]:
        with self._lock:
            belief = self.store.beliefs.get(belief_id)
            if belief is None:
                raise UnknownBelief(belief_id)
            return self._tree_node(belief_id)

    def _tree_node(self, belief_id: str) -> dict[str, Any]:
        belief = self.store.beliefs[belief_id]
        node: dict[str, Any] = {
            "belief": {
                "id": belief.id,
                "kind": belief.kind.value,
                "payload": dict(belief.payload),
                "status": belief.status,
            }
        }
        if belief.provenance.origin == "explicit":
            node["source"] = belief.provenance.source.to_json() if belief.provenance.source else None
            node["children"] = []
            return node
        jids = self.store.by_conclusion.get(belief_id, [])
        live = [
            j for j in jids
            if all(
                (b := self.store.beliefs.get(p)) is not None and b.active
                for p in self.store.justifications[j].premises
            )
        ]
        chosen = min(live) if live else (min(jids) if jids else None)
        if chosen is None:
            node["children"] = []
            return node
        justification = self.store.justifications[chosen]
        node["rule_id"] = justification.rule_id
        node["rule_version"] = justification.rule_version
        node["alternative_justifications"] = len(jids) - 1
        node["children"] = [
            self._tree_node(p) for p in sorted(justification.premises)
        ]
        return node

    def events_since(self, since_seq: int = 0, limit: Optional[int] = None) -> list[KBEvent]:
        with self._lock:
            return self.store.events_since(since_seq, limit)

    def export_events(self, since_seq: int = 0) -> list[dict[str, Any]]:
        return [e.to_json() for e in self.events_since(since_seq)]

    def engine_status(self) -> dict[str, int]:
        with self._lock:
            return self.engine.status()

    def well_founded_audit(self) -> list[str]:
        with self._lock:
            return self.core.well_founded_audit()

    def active_statements(self):
        with self._lock:
            return self.store.active_statements()

    def full_recompute(self) -> BeliefStore:
        with self._lock:
            return self.engine.full_recompute()

    def close(self) -> None:
        self.store.log.close()


def replay_into(events: Iterable[Mapping[str, Any]],
                data_dir: Optional[Union[str, Path]] = None,
                rule_config: Optional[Mapping[str, Any]] = None) -> KnowledgeBase:
    """Rebuild a KnowledgeBase from exported events. The materialized state
    comes entirely from the log; rule bodies are bound to whatever
    registrations the log carries."""
    kb = KnowledgeBase(data_dir=None, register_standard_rules=False)
    log = None
    if data_dir is not None:
        log = EventLog(Path(data_dir) / EVENT_LOG_NAME)
    kb.store = BeliefStore.replay((KBEvent.from_json(e) for e in events), log=log)
    kb.core = LogicalCore(kb.store)
    kb.engine = InferenceEngine(kb.store, kb.core)
    for rule_id, registration in kb.store.rules.items():
        builder = RULE_BUILDERS.get(rule_id)
        if builder is not None:
            kb.engine.bind_body(builder(registration.config, version=registration.version))
    if rule_config is not None:
        kb.ensure_standard_rules(rule_config, at=0)
    return kb
