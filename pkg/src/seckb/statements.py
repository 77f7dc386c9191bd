"""Statement and belief data model.

Every fact the knowledge base holds is a Statement: a kind plus a
kind-specific JSON payload. Statements are content-addressed: the belief id is
a truncated SHA-256 of the canonical (sorted-key, compact) serialization, so
asserting the same statement twice always lands on the same belief.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional

from .errors import SchemaViolation


class StatementKind(str, enum.Enum):
    REPORT_INGESTED = "ReportIngested"
    FINDING_OBSERVED = "FindingObserved"
    DUPLICATE_OF = "DuplicateOf"
    ISSUE_EXISTS = "IssueExists"
    ISSUE_MEMBER = "IssueMember"
    VALIDATION_STATUS = "ValidationStatus"
    PRIORITY_ASSIGNED = "PriorityAssigned"
    ASSESSMENT_MADE = "AssessmentMade"


# Kinds asserted from outside the KB; everything else is rule-derived.
EXPLICIT_KINDS = frozenset(
    {
        StatementKind.REPORT_INGESTED,
        StatementKind.FINDING_OBSERVED,
        StatementKind.ASSESSMENT_MADE,
    }
)

DERIVED_KINDS = frozenset(StatementKind) - EXPLICIT_KINDS


class Severity(str, enum.Enum):
    CRITICAL = "critical"
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"
    INFO = "info"

    @property
    def rank(self) -> int:
        return _SEVERITY_RANK[self]


_SEVERITY_RANK = {
    Severity.INFO: 0,
    Severity.LOW: 1,
    Severity.MEDIUM: 2,
    Severity.HIGH: 3,
    Severity.CRITICAL: 4,
}

VERDICTS = frozenset(
    {"false_positive", "confirmed", "mitigated", "not_duplicate", "severity_override"}
)

# Verdicts that translate into a ValidationStatus for the targeted issue.
STATUS_VERDICTS = frozenset({"false_positive", "confirmed", "mitigated"})

VALIDATION_STATUSES = frozenset({"unreviewed", "confirmed", "false_positive", "mitigated"})

TOOL_CATEGORIES = frozenset({"SAST", "DAST", "VST"})


class SourceKind(str, enum.Enum):
    TOOL_REPORT = "ToolReport"
    HUMAN_EXPERT = "HumanExpert"
    EXTERNAL_FEED = "ExternalFeed"


@dataclass(frozen=True)
class SourceRef:
    source_kind: SourceKind
    source_id: str

    def to_json(self) -> dict[str, str]:
        return {"source_kind": self.source_kind.value, "source_id": self.source_id}

    @staticmethod
    def from_json(obj: Mapping[str, Any]) -> "SourceRef":
        return SourceRef(SourceKind(obj["source_kind"]), obj["source_id"])


def canonical_payload_bytes(payload: Mapping[str, Any]) -> bytes:
    """Canonical byte serialization: sorted keys, compact separators, UTF-8.

    None-valued fields are dropped so optional fields do not perturb hashes.
    """
    return json.dumps(
        _strip_nones(payload), sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def _strip_nones(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {k: _strip_nones(v) for k, v in sorted(value.items()) if v is not None}
    if isinstance(value, (list, tuple)):
        return [_strip_nones(v) for v in value]
    return value


def belief_id_for(kind: StatementKind, payload: Mapping[str, Any]) -> str:
    """128-bit truncated SHA-256 of (kind, canonical payload), hex-encoded."""
    digest = hashlib.sha256()
    digest.update(kind.value.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(canonical_payload_bytes(payload))
    return digest.hexdigest()[:32]


@dataclass(frozen=True)
class Statement:
    kind: StatementKind
    payload: Mapping[str, Any]

    def belief_id(self) -> str:
        # content hash is hot (rule reconciliation recomputes emissions); cache
        # per instance, payloads are never mutated after construction
        cached = self.__dict__.get("_belief_id")
        if cached is None:
            cached = belief_id_for(self.kind, self.payload)
            object.__setattr__(self, "_belief_id", cached)
        return cached

    def validate(self) -> None:
        validate_payload(self.kind, self.payload)

    def to_json(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "payload": _strip_nones(self.payload)}

    @staticmethod
    def from_json(obj: Mapping[str, Any]) -> "Statement":
        return Statement(StatementKind(obj["kind"]), obj["payload"])


@dataclass(frozen=True)
class Provenance:
    """How a belief entered the KB: explicit from a source, or rule-derived."""

    origin: str  # "explicit" | "derived"
    asserted_at: int  # UTC milliseconds, supplied by the caller
    source: Optional[SourceRef] = None  # explicit only
    justification_id: Optional[str] = None  # derived only

    def to_json(self) -> dict[str, Any]:
        obj: dict[str, Any] = {"origin": self.origin, "asserted_at": self.asserted_at}
        if self.source is not None:
            obj["source"] = self.source.to_json()
        if self.justification_id is not None:
            obj["justification_id"] = self.justification_id
        return obj

    @staticmethod
    def from_json(obj: Mapping[str, Any]) -> "Provenance":
        source = obj.get("source")
        return Provenance(
            origin=obj["origin"],
            asserted_at=obj["asserted_at"],
            source=SourceRef.from_json(source) if source else None,
            justification_id=obj.get("justification_id"),
        )


@dataclass
class Belief:
    """Current incarnation of one content-addressed statement.

    A retracted belief's record is never flipped back; re-assertion bumps
    ``revision`` and replaces provenance, which keeps every incarnation
    reconstructible from the event log.
    """

    id: str
    statement: Statement
    provenance: Provenance
    status: str = "active"  # "active" | "retracted"
    revision: int = 1
    retracted_at: Optional[int] = None
    retracted_reason: Optional[str] = None

    @property
    def active(self) -> bool:
        return self.status == "active"

    @property
    def kind(self) -> StatementKind:
        return self.statement.kind

    @property
    def payload(self) -> Mapping[str, Any]:
        return self.statement.payload

    def is_human_explicit(self) -> bool:
        return (
            self.provenance.origin == "explicit"
            and self.provenance.source is not None
            and self.provenance.source.source_kind == SourceKind.HUMAN_EXPERT
        )

    def to_json(self) -> dict[str, Any]:
        obj = {
            "id": self.id,
            "statement": self.statement.to_json(),
            "provenance": self.provenance.to_json(),
            "status": self.status,
            "revision": self.revision,
        }
        if self.retracted_at is not None:
            obj["retracted_at"] = self.retracted_at
        if self.retracted_reason is not None:
            obj["retracted_reason"] = self.retracted_reason
        return obj


@dataclass(frozen=True)
class StatementPattern:
    """Filter for queries: kind plus field equality / prefix predicates.

    Field names are dotted payload paths (e.g. ``location.path``). Equality is
    exact; prefix matches string payload values only.
    """

    kind: Optional[StatementKind] = None
    equals: Mapping[str, Any] = field(default_factory=dict)
    prefix: Mapping[str, str] = field(default_factory=dict)

    def matches(self, statement: Statement) -> bool:
        if self.kind is not None and statement.kind != self.kind:
            return False
        for path, expected in self.equals.items():
            if _dig(statement.payload, path) != expected:
                return False
        for path, pre in self.prefix.items():
            value = _dig(statement.payload, path)
            if not isinstance(value, str) or not value.startswith(pre):
                return False
        return True


def _dig(payload: Mapping[str, Any], path: str) -> Any:
    node: Any = payload
    for part in path.split("."):
        if not isinstance(node, Mapping) or part not in node:
            return None
        node = node[part]
    return node


# --- payload schemas ---------------------------------------------------------
#
# Deliberately lightweight: enough to reject malformed writes at the store
# boundary with a precise message, not a general-purpose validator.

def _require(payload: Mapping[str, Any], key: str, types: tuple, kind: StatementKind) -> Any:
    if key not in payload:
        raise SchemaViolation(f"{kind.value}: missing field {key!r}")
    value = payload[key]
    if not isinstance(value, types):
        raise SchemaViolation(
            f"{kind.value}: field {key!r} has type {type(value).__name__}"
        )
    return value


def _require_str(payload: Mapping[str, Any], key: str, kind: StatementKind) -> str:
    value = _require(payload, key, (str,), kind)
    if not value:
        raise SchemaViolation(f"{kind.value}: field {key!r} is empty")
    return value


def _validate_report_ingested(p: Mapping[str, Any], k: StatementKind) -> None:
    _require_str(p, "report_hash", k)
    _require_str(p, "pipeline_run_id", k)
    _require_str(p, "format", k)
    _require_str(p, "tool_name", k)


def _validate_finding_observed(p: Mapping[str, Any], k: StatementKind) -> None:
    _require_str(p, "finding_key", k)
    _require(p, "title", (str,), k)
    _require(p, "description", (str,), k)
    severity = _require_str(p, "severity", k)
    if severity not in {s.value for s in Severity}:
        raise SchemaViolation(f"{k.value}: non-canonical severity {severity!r}")
    location = _require(p, "location", (Mapping, dict), k)
    if not any(location.get(f) for f in ("path", "endpoint", "component")):
        raise SchemaViolation(f"{k.value}: location needs path, endpoint or component")
    line = location.get("line")
    if line is not None and (not isinstance(line, int) or line < 1):
        raise SchemaViolation(f"{k.value}: location.line must be an int >= 1")
    identifiers = _require(p, "identifiers", (list,), k)
    if any(not isinstance(i, str) for i in identifiers):
        raise SchemaViolation(f"{k.value}: identifiers must be strings")
    _require_str(p, "tool_name", k)
    category = _require_str(p, "tool_category", k)
    if category not in TOOL_CATEGORIES:
        raise SchemaViolation(f"{k.value}: unknown tool_category {category!r}")
    ref = _require(p, "report_ref", (Mapping, dict), k)
    for key in ("pipeline_run_id", "report_hash"):
        if not ref.get(key):
            raise SchemaViolation(f"{k.value}: report_ref.{key} missing")


def _validate_duplicate_of(p: Mapping[str, Any], k: StatementKind) -> None:
    a = _require_str(p, "a", k)
    b = _require_str(p, "b", k)
    if not a < b:
        raise SchemaViolation(f"{k.value}: pair must be ordered, got {a!r} >= {b!r}")


def _validate_issue_exists(p: Mapping[str, Any], k: StatementKind) -> None:
    _require_str(p, "canonical", k)


def _validate_issue_member(p: Mapping[str, Any], k: StatementKind) -> None:
    _require_str(p, "issue", k)
    _require_str(p, "finding_key", k)


def _validate_validation_status(p: Mapping[str, Any], k: StatementKind) -> None:
    _require_str(p, "issue", k)
    status = _require_str(p, "status", k)
    if status not in VALIDATION_STATUSES:
        raise SchemaViolation(f"{k.value}: unknown status {status!r}")


def _validate_priority_assigned(p: Mapping[str, Any], k: StatementKind) -> None:
    _require_str(p, "issue", k)
    score = _require(p, "score", (int, float), k)
    if isinstance(score, bool) or score < 0:
        raise SchemaViolation(f"{k.value}: score must be a number >= 0")
    rank = _require(p, "rank", (int,), k)
    if isinstance(rank, bool) or rank < 1:
        raise SchemaViolation(f"{k.value}: rank must be a positive integer")
    _require(p, "formula_version", (int,), k)


def _validate_assessment_made(p: Mapping[str, Any], k: StatementKind) -> None:
    subject = _require(p, "subject", (Mapping, dict), k)
    verdict = _require_str(p, "verdict", k)
    if verdict not in VERDICTS:
        raise SchemaViolation(f"{k.value}: unknown verdict {verdict!r}")
    if verdict == "not_duplicate":
        pair = subject.get("pair")
        if (
            not isinstance(pair, list)
            or len(pair) != 2
            or any(not isinstance(x, str) or not x for x in pair)
            or not pair[0] < pair[1]
        ):
            raise SchemaViolation(f"{k.value}: not_duplicate needs an ordered finding pair")
    else:
        if not subject.get("finding_key"):
            raise SchemaViolation(f"{k.value}: subject.finding_key missing")
    if verdict == "severity_override":
        level = p.get("level")
        if level not in {s.value for s in Severity}:
            raise SchemaViolation(f"{k.value}: severity_override needs a canonical level")
    _require_str(p, "author", k)
    _require(p, "rationale", (str,), k)
    at = _require(p, "at", (int,), k)
    if isinstance(at, bool) or at < 0:
        raise SchemaViolation(f"{k.value}: at must be a non-negative timestamp")


_VALIDATORS = {
    StatementKind.REPORT_INGESTED: _validate_report_ingested,
    StatementKind.FINDING_OBSERVED: _validate_finding_observed,
    StatementKind.DUPLICATE_OF: _validate_duplicate_of,
    StatementKind.ISSUE_EXISTS: _validate_issue_exists,
    StatementKind.ISSUE_MEMBER: _validate_issue_member,
    StatementKind.VALIDATION_STATUS: _validate_validation_status,
    StatementKind.PRIORITY_ASSIGNED: _validate_priority_assigned,
    StatementKind.ASSESSMENT_MADE: _validate_assessment_made,
}


def validate_payload(kind: StatementKind, payload: Mapping[str, Any]) -> None:
    if not isinstance(payload, Mapping):
        raise SchemaViolation(f"{kind.value}: payload must be an object")
    _VALIDATORS[kind](payload, kind)


def max_severity(values: Iterable[str]) -> Optional[Severity]:
    best: Optional[Severity] = None
    for value in values:
        sev = Severity(value)
        if best is None or sev.rank > best.rank:
            best = sev
    return best
