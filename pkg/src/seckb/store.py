"""Append-only, event-sourced belief storage with a materialized index.

The event log is the source of truth: one JSON object per line, gapless
``seq``, never rewritten. The in-memory index (beliefs, justification edges,
rule registrations) is a pure fold over the log, so replaying the log into a
fresh store reproduces the live state exactly.

Writes go to disk before they touch the index; a failed append leaves the
store unchanged. The store itself is not thread-safe: the owning
KnowledgeBase serializes all mutations through a single writer lock.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Optional

from .errors import (
    AlreadyRetracted,
    CorruptLog,
    CycleDetected,
    DanglingPremise,
    SchemaViolation,
    StorageFailure,
    UnknownBelief,
    UnknownRule,
)
from .statements import (
    Belief,
    Provenance,
    SourceRef,
    Statement,
    StatementKind,
    StatementPattern,
    canonical_payload_bytes,
)

EVENT_ASSERT = "Assert"
EVENT_RETRACT = "Retract"
EVENT_RULE_REGISTERED = "RuleRegistered"
EVENT_RULE_REMOVED = "RuleRemoved"

_EVENT_KINDS = {EVENT_ASSERT, EVENT_RETRACT, EVENT_RULE_REGISTERED, EVENT_RULE_REMOVED}


@dataclass(frozen=True)
class KBEvent:
    seq: int
    at: int
    kind: str
    payload: Mapping[str, Any]

    def to_json(self) -> dict[str, Any]:
        return {"seq": self.seq, "at": self.at, "kind": self.kind, "payload": self.payload}

    @staticmethod
    def from_json(obj: Mapping[str, Any]) -> "KBEvent":
        return KBEvent(obj["seq"], obj["at"], obj["kind"], obj["payload"])


def justification_id_for(rule_id: str, premises: Iterable[str], conclusion: str) -> str:
    digest = hashlib.sha256()
    digest.update(rule_id.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(",".join(sorted(premises)).encode("utf-8"))
    digest.update(b"\x00")
    digest.update(conclusion.encode("utf-8"))
    return digest.hexdigest()[:32]


@dataclass(frozen=True)
class Justification:
    """Support edge: ``premises`` jointly produced ``conclusion`` via a rule."""

    rule_id: str
    rule_version: int
    premises: frozenset[str]
    conclusion: str
    id: str = ""

    def __post_init__(self):
        if not self.premises:
            raise SchemaViolation("justification premises must be non-empty")
        computed = justification_id_for(self.rule_id, self.premises, self.conclusion)
        if not self.id:
            object.__setattr__(self, "id", computed)
        elif self.id != computed:
            raise SchemaViolation("justification id does not match its content")

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "rule_id": self.rule_id,
            "rule_version": self.rule_version,
            "premises": sorted(self.premises),
            "conclusion": self.conclusion,
        }

    @staticmethod
    def from_json(obj: Mapping[str, Any]) -> "Justification":
        return Justification(
            rule_id=obj["rule_id"],
            rule_version=obj["rule_version"],
            premises=frozenset(obj["premises"]),
            conclusion=obj["conclusion"],
            id=obj.get("id", ""),
        )


@dataclass(frozen=True)
class RuleRegistration:
    """Logged activation of a rule; the body itself lives in the host program."""

    rule_id: str
    version: int
    stratum: int
    read_kinds: frozenset[StatementKind]
    write_kinds: frozenset[StatementKind]
    config: Mapping[str, Any]

    def to_json(self) -> dict[str, Any]:
        return {
            "rule_id": self.rule_id,
            "version": self.version,
            "stratum": self.stratum,
            "read_kinds": sorted(k.value for k in self.read_kinds),
            "write_kinds": sorted(k.value for k in self.write_kinds),
            "config": self.config,
        }

    @staticmethod
    def from_json(obj: Mapping[str, Any]) -> "RuleRegistration":
        return RuleRegistration(
            rule_id=obj["rule_id"],
            version=obj["version"],
            stratum=obj["stratum"],
            read_kinds=frozenset(StatementKind(k) for k in obj["read_kinds"]),
            write_kinds=frozenset(StatementKind(k) for k in obj["write_kinds"]),
            config=obj["config"],
        )


class EventLog:
    """JSONL event log. With ``path=None`` the log is memory-only (tests,
    scratch recomputations)."""

    def __init__(self, path: Optional[Path] = None, fsync: bool = False):
        self.path = Path(path) if path is not None else None
        self.fsync = fsync
        self._fh: Optional[io.TextIOWrapper] = None
        self._memory: list[KBEvent] = []

    def read_existing(self) -> list[KBEvent]:
        if self.path is None or not self.path.exists():
            return []
        events = []
        with self.path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    events.append(KBEvent.from_json(json.loads(line)))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise CorruptLog(lineno, f"unreadable log line: {exc}") from exc
        return events

    def append(self, event: KBEvent) -> None:
        if self.path is None:
            self._memory.append(event)
            return
        try:
            if self._fh is None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = self.path.open("a", encoding="utf-8")
            self._fh.write(json.dumps(event.to_json(), separators=(",", ":")) + "\n")
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())
        except OSError as exc:
            raise StorageFailure(f"could not append event seq {event.seq}: {exc}") from exc

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class BeliefStore:
    """Materialized current state plus the log that produced it."""

    def __init__(self, log: Optional[EventLog] = None):
        self.log = log or EventLog()
        self.seq = 0
        self.beliefs: dict[str, Belief] = {}
        self.active_by_kind: dict[StatementKind, set[str]] = {k: set() for k in StatementKind}
        self.justifications: dict[str, Justification] = {}
        self.by_conclusion: dict[str, list[str]] = {}
        self.by_premise: dict[str, set[str]] = {}
        self.rules: dict[str, RuleRegistration] = {}
        self.events: list[KBEvent] = []
        # finding_key -> active FindingObserved belief ids (hot path for rules)
        self._findings_by_key: dict[str, set[str]] = {}
        for event in self.log.read_existing():
            self._check_and_apply(event, replaying=True)

    # --- event plumbing -------------------------------------------------

    def _append(self, kind: str, at: int, payload: Mapping[str, Any]) -> KBEvent:
        event = KBEvent(seq=self.seq + 1, at=at, kind=kind, payload=payload)
        self.log.append(event)  # disk first; StorageFailure leaves state untouched
        self._apply(event)
        return event

    def _check_and_apply(self, event: KBEvent, replaying: bool) -> None:
        expected = self.seq + 1
        if event.seq != expected:
            raise CorruptLog(expected, f"expected seq {expected}, found {event.seq}")
        if event.kind not in _EVENT_KINDS:
            raise CorruptLog(event.seq, f"unknown event kind {event.kind!r}")
        try:
            self._apply(event)
        except (SchemaViolation, KeyError, TypeError, ValueError) as exc:
            raise CorruptLog(event.seq, str(exc)) from exc

    def _apply(self, event: KBEvent) -> None:
        handler = {
            EVENT_ASSERT: self._apply_assert,
            EVENT_RETRACT: self._apply_retract,
            EVENT_RULE_REGISTERED: self._apply_rule_registered,
            EVENT_RULE_REMOVED: self._apply_rule_removed,
        }[event.kind]
        handler(event)
        self.seq = event.seq
        self.events.append(event)

    def _apply_assert(self, event: KBEvent) -> None:
        payload = event.payload
        justification = payload.get("justification")
        if justification is not None:
            self._record_justification(Justification.from_json(justification))
        if payload.get("support_only"):
            return
        record = payload["belief"]
        statement = Statement.from_json(record["statement"])
        statement.validate()
        belief_id = record["id"]
        if statement.belief_id() != belief_id:
            raise SchemaViolation(f"belief id {belief_id} does not match statement hash")
        belief = Belief(
            id=belief_id,
            statement=statement,
            provenance=Provenance.from_json(record["provenance"]),
            status="active",
            revision=record.get("revision", 1),
        )
        self.beliefs[belief_id] = belief
        self.active_by_kind[statement.kind].add(belief_id)
        if statement.kind == StatementKind.FINDING_OBSERVED:
            key = statement.payload["finding_key"]
            self._findings_by_key.setdefault(key, set()).add(belief_id)

    def _apply_retract(self, event: KBEvent) -> None:
        belief_id = event.payload["id"]
        belief = self.beliefs[belief_id]
        belief.status = "retracted"
        belief.retracted_at = event.at
        belief.retracted_reason = event.payload.get("reason", "")
        self.active_by_kind[belief.kind].discard(belief_id)
        if belief.kind == StatementKind.FINDING_OBSERVED:
            key = belief.payload["finding_key"]
            keyed = self._findings_by_key.get(key)
            if keyed is not None:
                keyed.discard(belief_id)
                if not keyed:
                    del self._findings_by_key[key]

    def _apply_rule_registered(self, event: KBEvent) -> None:
        registration = RuleRegistration.from_json(event.payload)
        self.rules[registration.rule_id] = registration

    def _apply_rule_removed(self, event: KBEvent) -> None:
        rule_id = event.payload["rule_id"]
        existing = self.rules.get(rule_id)
        if existing is not None and existing.version == event.payload["version"]:
            del self.rules[rule_id]

    def _record_justification(self, justification: Justification) -> None:
        if justification.id in self.justifications:
            return
        self.justifications[justification.id] = justification
        self.by_conclusion.setdefault(justification.conclusion, []).append(justification.id)
        for premise in justification.premises:
            self.by_premise.setdefault(premise, set()).add(justification.id)

    # --- write operations -------------------------------------------------

    def assert_explicit(self, statement: Statement, source: SourceRef, at: int) -> tuple[str, bool]:
        """Assert a belief from outside the KB. Returns (belief_id, changed).

        Idempotent: an identical active belief short-circuits without an event.
        """
        belief_id = statement.belief_id()
        existing = self.beliefs.get(belief_id)
        if existing is not None and existing.active:
            return belief_id, False
        statement.validate()
        revision = existing.revision + 1 if existing is not None else 1
        provenance = Provenance(origin="explicit", asserted_at=at, source=source)
        self._append(
            EVENT_ASSERT,
            at,
            {
                "belief": {
                    "id": belief_id,
                    "statement": statement.to_json(),
                    "provenance": provenance.to_json(),
                    "revision": revision,
                }
            },
        )
        return belief_id, True

    def assert_derived(self, statement: Statement, justification: Justification, at: int) -> tuple[str, str]:
        """Assert a rule-derived belief. Returns (belief_id, outcome) where
        outcome is "new" (status changed to active), "resupported" (new
        alternative justification on an already-active belief) or "noop".
        """
        belief_id = statement.belief_id()
        if justification.conclusion != belief_id:
            raise SchemaViolation("justification conclusion does not match the statement")
        if justification.rule_id not in self.rules:
            raise UnknownRule(justification.rule_id)
        existing = self.beliefs.get(belief_id)
        if (
            existing is not None
            and existing.active
            and justification.id in self.justifications
        ):
            return belief_id, "noop"  # identical derivation, nothing to record
        statement.validate()
        for premise in justification.premises:
            premise_belief = self.beliefs.get(premise)
            if premise_belief is None or not premise_belief.active:
                raise DanglingPremise(premise)
        self._check_acyclic(justification)

        if existing is not None and existing.active:
            self._append(
                EVENT_ASSERT,
                at,
                {
                    "support_only": True,
                    "belief": {"id": belief_id},
                    "justification": justification.to_json(),
                },
            )
            return belief_id, "resupported"

        revision = existing.revision + 1 if existing is not None else 1
        provenance = Provenance(
            origin="derived", asserted_at=at, justification_id=justification.id
        )
        self._append(
            EVENT_ASSERT,
            at,
            {
                "belief": {
                    "id": belief_id,
                    "statement": statement.to_json(),
                    "provenance": provenance.to_json(),
                    "revision": revision,
                },
                "justification": justification.to_json(),
            },
        )
        return belief_id, "new"

    def retract_one(self, belief_id: str, reason: str, at: int,
                    root: Optional[str] = None, depth: int = 0) -> None:
        """Flip one belief to retracted. Cascading lives in the logical core."""
        belief = self.beliefs.get(belief_id)
        if belief is None:
            raise UnknownBelief(belief_id)
        if not belief.active:
            raise AlreadyRetracted(belief_id)
        payload: dict[str, Any] = {"id": belief_id, "reason": reason, "depth": depth}
        if root is not None:
            payload["root"] = root
        self._append(EVENT_RETRACT, at, payload)

    def register_rule(self, registration: RuleRegistration, at: int) -> None:
        self._append(EVENT_RULE_REGISTERED, at, registration.to_json())

    def remove_rule(self, rule_id: str, version: int, at: int) -> None:
        self._append(EVENT_RULE_REMOVED, at, {"rule_id": rule_id, "version": version})

    def _check_acyclic(self, justification: Justification) -> None:
        """Reject an edge set that would let the conclusion support itself."""
        target_premises = justification.premises
        if justification.conclusion in target_premises:
            raise CycleDetected(justification.conclusion)
        # Would any premise become reachable FROM the conclusion?
        stack = [justification.conclusion]
        seen = set()
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            for jid in self.by_premise.get(node, ()):
                downstream = self.justifications[jid].conclusion
                if downstream in target_premises:
                    raise CycleDetected(justification.conclusion)
                stack.append(downstream)

    # --- read operations ---------------------------------------------------

    def get(self, belief_id: str) -> Belief:
        belief = self.beliefs.get(belief_id)
        if belief is None:
            raise UnknownBelief(belief_id)
        return belief

    def active(self, kind: StatementKind) -> Iterator[Belief]:
        for belief_id in self.active_by_kind[kind]:
            yield self.beliefs[belief_id]

    def active_findings_for_key(self, finding_key: str) -> list[Belief]:
        return [self.beliefs[i] for i in self._findings_by_key.get(finding_key, ())]

    def active_finding_keys(self) -> list[str]:
        return list(self._findings_by_key.keys())

    def query(self, pattern: StatementPattern) -> list[Belief]:
        kinds = [pattern.kind] if pattern.kind is not None else list(StatementKind)
        results = []
        for kind in kinds:
            for belief in self.active(kind):
                if pattern.matches(belief.statement):
                    results.append(belief)
        results.sort(key=lambda b: (b.kind.value, b.id))
        return results

    def active_statements(self) -> set[tuple[str, bytes]]:
        """The comparable essence of the KB: every active (kind, payload)."""
        out = set()
        for kind, ids in self.active_by_kind.items():
            for belief_id in ids:
                out.add((kind.value, canonical_payload_bytes(self.beliefs[belief_id].payload)))
        return out

    def events_since(self, since_seq: int, limit: Optional[int] = None) -> list[KBEvent]:
        if since_seq < 0:
            raise ValueError("since_seq must be >= 0")
        page = [e for e in self.events if e.seq > since_seq]
        if limit is not None:
            page = page[:limit]
        return page

    def derived_active_count(self) -> int:
        count = 0
        for ids in self.active_by_kind.values():
            for belief_id in ids:
                if self.beliefs[belief_id].provenance.origin == "derived":
                    count += 1
        return count

    # --- replay --------------------------------------------------------------

    @staticmethod
    def replay(events: Iterable[KBEvent], log: Optional[EventLog] = None) -> "BeliefStore":
        """Rebuild a store from an event sequence. Raises CorruptLog on a gap,
        a belief-id/content mismatch, or a schema-invalid statement, naming the
        offending seq."""
        store = BeliefStore(log=log or EventLog())
        for event in events:
            store._check_and_apply(event, replaying=True)
            if log is not None:
                log.append(event)
        return store
