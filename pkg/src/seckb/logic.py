"""Consistency machinery over the belief store.

Watches every change for contradictions, resolves them with human input
dominating machine inference, and retracts dependent derived beliefs whose
support disappears (cascading revision). Also provides the well-foundedness
audit used as a system self-check: every active derived belief must trace back
to active explicit beliefs through at least one justification chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from .errors import DanglingPremise, UnknownBelief
from .statements import SourceKind, StatementKind
from .store import BeliefStore, Justification

# Statement kinds whose co-active instances can be incompatible, and how the
# conflict topic is keyed. This table is closed by design: contradiction
# detection is O(affected topic) per change, not general logical negation.
_STATUS_KIND = StatementKind.VALIDATION_STATUS
_PRIORITY_KIND = StatementKind.PRIORITY_ASSIGNED
_DUP_KIND = StatementKind.DUPLICATE_OF
_ASSESS_KIND = StatementKind.ASSESSMENT_MADE


@dataclass(frozen=True)
class Contradiction:
    topic: tuple
    parties: frozenset[str]
    detected_at: int


@dataclass(frozen=True)
class Resolution:
    kept: str
    retracted: frozenset[str]
    rule: str  # "HumanOverMachine" | "NewerHumanOverOlderHuman" | "NewerReportOverOlderReport"


@dataclass
class RevisionReport:
    """What one command retracted, in cascade order with depths."""

    root: str
    retracted: list[tuple[str, int]] = field(default_factory=list)
    rederivation_scheduled: bool = True

    def to_json(self) -> dict:
        return {
            "root": self.root,
            "retracted": [{"id": i, "depth": d} for i, d in self.retracted],
            "rederivation_scheduled": self.rederivation_scheduled,
        }


class LogicalCore:
    def __init__(self, store: BeliefStore):
        self.store = store
        self.contradictions_resolved = 0

    # --- justification bookkeeping ----------------------------------------

    def record_justification(self, justification: Justification, at: int) -> str:
        """Record a support edge for an existing belief. Idempotent by id;
        rejects edges that would create a cycle or cite missing premises."""
        if justification.id in self.store.justifications:
            return justification.id
        conclusion = self.store.beliefs.get(justification.conclusion)
        if conclusion is None:
            raise UnknownBelief(justification.conclusion)
        for premise in justification.premises:
            belief = self.store.beliefs.get(premise)
            if belief is None or not belief.active:
                raise DanglingPremise(premise)
        self.store._check_acyclic(justification)
        self.store._append(
            "Assert",
            at,
            {
                "support_only": True,
                "belief": {"id": justification.conclusion},
                "justification": justification.to_json(),
            },
        )
        return justification.id

    # --- contradiction detection -------------------------------------------

    def detect_contradictions(self, delta: Iterable[str], at: int) -> list[Contradiction]:
        """Contradictions in which at least one party is in ``delta``. Topic
        indexes are built once per call, so cost is O(active of the touched
        kinds), not O(delta x active)."""
        delta_beliefs = []
        for belief_id in sorted(set(delta)):
            belief = self.store.beliefs.get(belief_id)
            if belief is not None and belief.active:
                delta_beliefs.append(belief)
        if not delta_beliefs:
            return []
        touched_kinds = {b.kind for b in delta_beliefs}

        status_by_issue: dict[str, set[str]] = {}
        if _STATUS_KIND in touched_kinds:
            for b in self.store.active(_STATUS_KIND):
                status_by_issue.setdefault(b.payload["issue"], set()).add(b.id)
        priority_by_issue: dict[str, set[str]] = {}
        if _PRIORITY_KIND in touched_kinds:
            for b in self.store.active(_PRIORITY_KIND):
                priority_by_issue.setdefault(b.payload["issue"], set()).add(b.id)
        dup_by_pair: dict[tuple[str, str], set[str]] = {}
        nd_by_pair: dict[tuple[str, str], set[str]] = {}
        if _DUP_KIND in touched_kinds or _ASSESS_KIND in touched_kinds:
            for b in self.store.active(_DUP_KIND):
                dup_by_pair.setdefault((b.payload["a"], b.payload["b"]), set()).add(b.id)
            for b in self.store.active(_ASSESS_KIND):
                if b.payload["verdict"] == "not_duplicate":
                    pair = tuple(b.payload["subject"]["pair"])
                    nd_by_pair.setdefault(pair, set()).add(b.id)

        found: dict[tuple, set[str]] = {}
        for belief in delta_beliefs:
            kind = belief.kind
            if kind is _STATUS_KIND:
                issue = belief.payload["issue"]
                parties = status_by_issue.get(issue, set())
                if len(parties) > 1:
                    found.setdefault(("validation", issue), set()).update(parties)
            elif kind is _PRIORITY_KIND:
                issue = belief.payload["issue"]
                parties = priority_by_issue.get(issue, set())
                scores = {
                    self.store.beliefs[p].payload["score"] for p in parties
                }
                if len(parties) > 1 and len(scores) > 1:
                    found.setdefault(("priority", issue), set()).update(parties)
            elif kind is _DUP_KIND:
                pair = (belief.payload["a"], belief.payload["b"])
                others = nd_by_pair.get(pair, set())
                if others:
                    found.setdefault(("duplicate", *pair), set()).update(
                        others | {belief.id}
                    )
            elif kind is _ASSESS_KIND and belief.payload["verdict"] == "not_duplicate":
                pair = tuple(belief.payload["subject"]["pair"])
                dups = dup_by_pair.get(pair, set())
                if dups:
                    found.setdefault(("duplicate", *pair), set()).update(
                        dups | {belief.id}
                    )
        return [
            Contradiction(topic=topic, parties=frozenset(parties), detected_at=at)
            for topic, parties in sorted(found.items())
        ]

    # --- resolution ---------------------------------------------------------

    def resolve(self, contradiction: Contradiction, at: int,
                sink: Optional[list[tuple[str, int]]] = None,
                base_depth: int = 1) -> Resolution:
        """Keep exactly one party; retract the rest with cascades.

        Precedence: human-grounded beats machine; among human-grounded the
        newest human input wins; among machine beliefs the newest underlying
        report wins; remaining ties go to the lexicographically smaller id.
        The id tiebreak makes resolution total.
        """
        parties = sorted(contradiction.parties)
        ranked = sorted(parties, key=self._precedence_key)
        kept = ranked[0]
        losers = ranked[1:]

        kept_key = self._precedence_key(kept)
        if losers:
            runner_key = self._precedence_key(losers[0])
            if kept_key[0] != runner_key[0]:
                rule = "HumanOverMachine"
            elif kept_key[0] == 0:  # both human-grounded
                rule = "NewerHumanOverOlderHuman"
            else:
                rule = "NewerReportOverOlderReport"
        else:
            rule = "NewerReportOverOlderReport"

        for loser in losers:
            belief = self.store.beliefs.get(loser)
            if belief is not None and belief.active:
                self.retract_with_cascade(
                    loser,
                    reason=f"lost contradiction on {'/'.join(str(t) for t in contradiction.topic)}",
                    at=at,
                    base_depth=base_depth,
                    sink=sink,
                )
        self.contradictions_resolved += 1
        return Resolution(kept=kept, retracted=frozenset(losers), rule=rule)

    def _precedence_key(self, belief_id: str) -> tuple:
        human_time = self._newest_source_time(belief_id, SourceKind.HUMAN_EXPERT)
        report_time = self._newest_source_time(belief_id, SourceKind.TOOL_REPORT)
        is_human = 0 if human_time is not None else 1  # humans sort first
        return (
            is_human,
            -(human_time if human_time is not None else 0),
            -(report_time if report_time is not None else 0),
            belief_id,
        )

    def _newest_source_time(self, belief_id: str, source_kind: SourceKind) -> Optional[int]:
        """Newest asserted_at among explicit beliefs of ``source_kind`` in the
        live premise closure (including the belief itself). Justifications
        with a retracted premise are dead support and do not count."""
        newest: Optional[int] = None
        stack = [belief_id]
        seen: set[str] = set()
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            belief = self.store.beliefs.get(node)
            if belief is None or not belief.active:
                continue
            prov = belief.provenance
            if (
                prov.origin == "explicit"
                and prov.source is not None
                and prov.source.source_kind == source_kind
            ):
                if newest is None or prov.asserted_at > newest:
                    newest = prov.asserted_at
            for jid in self.store.by_conclusion.get(node, ()):
                justification = self.store.justifications[jid]
                if all(
                    (p := self.store.beliefs.get(premise)) is not None and p.active
                    for premise in justification.premises
                ):
                    stack.extend(justification.premises)
        return newest

    # --- cascading revision ---------------------------------------------------

    def retract_with_cascade(self, belief_id: str, reason: str, at: int,
                             base_depth: int = 0,
                             sink: Optional[list[tuple[str, int]]] = None) -> RevisionReport:
        """Retract ``belief_id`` and then every derived dependent left without
        a fully-active justification."""
        self.store.retract_one(belief_id, reason, at, root=None, depth=base_depth)
        if base_depth > 0 and sink is not None:
            sink.append((belief_id, base_depth))
        return self.invalidate_cascade(belief_id, at, sink=sink, base_depth=base_depth)

    def invalidate_cascade(self, root: str, at: int,
                           sink: Optional[list[tuple[str, int]]] = None,
                           base_depth: int = 0) -> RevisionReport:
        """Cascade from an already-retracted root. Wave order gives depths; a
        dependent keeping one live justification is never touched (cascade
        minimality). Explicit beliefs are grounded outside the graph and never
        cascade."""
        belief = self.store.get(root)
        if belief.active:
            raise ValueError(f"invalidate_cascade root {root} is still active")
        report = RevisionReport(root=root)
        frontier = [root]
        wave = 0
        while frontier:
            wave += 1
            candidates: set[str] = set()
            for node in frontier:
                for jid in self.store.by_premise.get(node, ()):
                    candidates.add(self.store.justifications[jid].conclusion)
            next_frontier = []
            for candidate in sorted(candidates):
                dependent = self.store.beliefs.get(candidate)
                if dependent is None or not dependent.active:
                    continue
                if dependent.provenance.origin != "derived":
                    continue
                if self._has_live_justification(candidate):
                    continue
                depth = base_depth + wave
                self.store.retract_one(
                    candidate, f"support lost via {root}", at, root=root, depth=depth
                )
                report.retracted.append((candidate, depth))
                if sink is not None:
                    sink.append((candidate, depth))
                next_frontier.append(candidate)
            frontier = next_frontier
        return report

    def _has_live_justification(self, belief_id: str) -> bool:
        for jid in self.store.by_conclusion.get(belief_id, ()):
            justification = self.store.justifications[jid]
            if all(
                (premise_belief := self.store.beliefs.get(premise)) is not None
                and premise_belief.active
                for premise in justification.premises
            ):
                return True
        return False

    # --- audit ---------------------------------------------------------------

    def well_founded_audit(self) -> list[str]:
        """Active derived beliefs with no justification chain grounding out in
        active explicit beliefs. Always empty when the system is healthy."""
        memo: dict[str, bool] = {}

        def grounded(belief_id: str, in_progress: set[str]) -> bool:
            if belief_id in memo:
                return memo[belief_id]
            if belief_id in in_progress:
                return False
            belief = self.store.beliefs.get(belief_id)
            if belief is None or not belief.active:
                return False
            if belief.provenance.origin == "explicit":
                memo[belief_id] = True
                return True
            in_progress.add(belief_id)
            ok = False
            for jid in self.store.by_conclusion.get(belief_id, ()):
                justification = self.store.justifications[jid]
                if all(grounded(p, in_progress) for p in justification.premises):
                    ok = True
                    break
            in_progress.discard(belief_id)
            memo[belief_id] = ok
            return ok

        failures = []
        for kind, ids in self.store.active_by_kind.items():
            for belief_id in ids:
                belief = self.store.beliefs[belief_id]
                if belief.provenance.origin == "derived" and not grounded(belief_id, set()):
                    failures.append(belief_id)
        return sorted(failures)
