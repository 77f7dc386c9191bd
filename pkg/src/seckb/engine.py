"""Stratified, incremental rule evaluation to fixpoint.

Rules declare a stratum, the statement kinds they read, and the kinds they
write; a rule may only read kinds produced by strictly lower strata or
asserted from outside. When a rule's read set intersects the current change
delta the rule re-emits its complete desired output over the live snapshot,
and the engine reconciles: new conclusions are asserted, new support edges
recorded, and conclusions the rule no longer stands behind are retracted with
cascades. Reconciliation is what keeps incremental operation equivalent to a
full recomputation from the explicit beliefs.

Contradiction detection and resolution run after every pass; fixpoint is
reached when a pass changes nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Optional

from .errors import DivergenceGuard, DuplicateRule, StratificationViolation, UnknownRule
from .logic import LogicalCore
from .statements import EXPLICIT_KINDS, Statement, StatementKind
from .store import BeliefStore, EventLog, Justification, RuleRegistration


@dataclass(frozen=True)
class Derivation:
    """One rule output: a statement plus the active premises that produced it."""

    statement: Statement
    premises: frozenset[str]


RuleBody = Callable[["Snapshot", "Delta"], list[Derivation]]


@dataclass(frozen=True)
class Rule:
    rule_id: str
    version: int
    stratum: int
    read_kinds: frozenset[StatementKind]
    write_kinds: frozenset[StatementKind]
    config: Mapping[str, Any]
    body: RuleBody

    def registration(self) -> RuleRegistration:
        return RuleRegistration(
            rule_id=self.rule_id,
            version=self.version,
            stratum=self.stratum,
            read_kinds=self.read_kinds,
            write_kinds=self.write_kinds,
            config=self.config,
        )


@dataclass
class Delta:
    """Net change of one evaluation unit: ids asserted (or re-supported) minus
    ids retracted. A belief asserted and retracted in the same unit counts
    only by its final transition."""

    asserted: set[str] = field(default_factory=set)
    retracted: set[str] = field(default_factory=set)
    origin_seq: tuple[int, int] = (0, 0)

    def note_asserted(self, belief_id: str) -> None:
        self.asserted.add(belief_id)
        self.retracted.discard(belief_id)

    def note_retracted(self, belief_id: str) -> None:
        self.retracted.add(belief_id)
        self.asserted.discard(belief_id)

    def merge(self, other: "Delta") -> None:
        for belief_id in other.asserted:
            self.note_asserted(belief_id)
        for belief_id in other.retracted:
            self.note_retracted(belief_id)

    def is_empty(self) -> bool:
        return not self.asserted and not self.retracted

    def kinds(self, store: BeliefStore) -> set[StatementKind]:
        out = set()
        for belief_id in self.asserted | self.retracted:
            belief = store.beliefs.get(belief_id)
            if belief is not None:
                out.add(belief.kind)
        return out


class Snapshot:
    """Read-only view handed to rule bodies. Bodies must not mutate the KB and
    must derive their output only from what this exposes."""

    def __init__(self, store: BeliefStore):
        self._store = store

    def active(self, kind: StatementKind):
        return self._store.active(kind)

    def active_finding_keys(self) -> list[str]:
        return self._store.active_finding_keys()

    def active_findings_for_key(self, finding_key: str):
        return self._store.active_findings_for_key(finding_key)

    def belief(self, belief_id: str):
        return self._store.beliefs.get(belief_id)


# Application order inside one reconciliation: premises before conclusions.
_KIND_APPLY_ORDER = {
    StatementKind.DUPLICATE_OF: 0,
    StatementKind.ISSUE_EXISTS: 1,
    StatementKind.ISSUE_MEMBER: 2,
    StatementKind.VALIDATION_STATUS: 3,
    StatementKind.PRIORITY_ASSIGNED: 4,
}


class InferenceEngine:
    def __init__(self, store: BeliefStore, core: LogicalCore,
                 divergence_bound: int = 10_000):
        self.store = store
        self.core = core
        self.divergence_bound = divergence_bound
        self.bodies: dict[str, Rule] = {}
        self._forced: set[str] = set()
        self._justification_cache: dict[tuple, Justification] = {}
        self.last_fixpoint_seq = store.seq
        self.last_passes = 0

    # --- registration --------------------------------------------------------

    def register_rule(self, rule: Rule, at: int) -> None:
        existing = self.store.rules.get(rule.rule_id)
        if existing is not None:
            raise DuplicateRule(rule.rule_id, existing.version)
        self._check_stratification(rule)
        self.store.register_rule(rule.registration(), at)
        self.bodies[rule.rule_id] = rule
        self._forced.add(rule.rule_id)  # new rules apply retroactively

    def bind_body(self, rule: Rule) -> None:
        """Attach a body to a registration recovered from the event log. The
        rule's declared shape must match what was logged."""
        registered = self.store.rules.get(rule.rule_id)
        if registered is None:
            raise UnknownRule(rule.rule_id)
        self.bodies[rule.rule_id] = rule

    def replace_rule(self, rule: Rule, at: int,
                     sink: Optional[list[tuple[str, int]]] = None) -> None:
        """Swap in a new version: beliefs whose support cites only the old
        version are retracted (cascading), then the new version is registered
        and scheduled for full re-evaluation."""
        existing = self.store.rules.get(rule.rule_id)
        if existing is None:
            raise UnknownRule(rule.rule_id)
        if rule.version <= existing.version:
            raise DuplicateRule(rule.rule_id, rule.version)
        self._check_stratification(rule, ignore={rule.rule_id})

        stale = []
        for kind in existing.write_kinds:
            for belief in list(self.store.active(kind)):
                jids = self.store.by_conclusion.get(belief.id, [])
                cited = [self.store.justifications[j] for j in jids]
                if cited and all(
                    j.rule_id == rule.rule_id and j.rule_version == existing.version
                    for j in cited
                ):
                    stale.append(belief.id)
        for belief_id in sorted(stale):
            belief = self.store.beliefs.get(belief_id)
            if belief is not None and belief.active:
                self.core.retract_with_cascade(
                    belief_id, f"rule {rule.rule_id} replaced", at,
                    base_depth=1, sink=sink,
                )

        self.store.remove_rule(rule.rule_id, existing.version, at)
        self.store.register_rule(rule.registration(), at)
        self.bodies[rule.rule_id] = rule
        self._forced.add(rule.rule_id)
        self._justification_cache.clear()

    def _check_stratification(self, rule: Rule, ignore: set[str] = frozenset()) -> None:
        """Reads must come from strictly lower strata or explicit kinds, both
        for the new rule against the registered set and vice versa."""
        writers: dict[StatementKind, list[RuleRegistration]] = {}
        readers: dict[StatementKind, list[RuleRegistration]] = {}
        for registration in self.store.rules.values():
            if registration.rule_id in ignore:
                continue
            for kind in registration.write_kinds:
                writers.setdefault(kind, []).append(registration)
            for kind in registration.read_kinds:
                readers.setdefault(kind, []).append(registration)

        for kind in rule.read_kinds:
            if kind in EXPLICIT_KINDS:
                continue
            for writer in writers.get(kind, []):
                if writer.stratum >= rule.stratum:
                    raise StratificationViolation(rule.rule_id, writer.rule_id, kind.value)
            if kind in rule.write_kinds:
                raise StratificationViolation(rule.rule_id, rule.rule_id, kind.value)
        for kind in rule.write_kinds:
            for reader in readers.get(kind, []):
                if kind not in EXPLICIT_KINDS and reader.stratum <= rule.stratum:
                    raise StratificationViolation(rule.rule_id, reader.rule_id, kind.value)

    # --- evaluation ------------------------------------------------------------

    def run_to_fixpoint(self, seed: Delta, at: int,
                        sink: Optional[list[tuple[str, int]]] = None) -> Delta:
        cumulative = Delta()
        cumulative.merge(seed)
        delta = seed
        passes = 0
        recent_keys: list[set[str]] = []

        while True:
            if passes >= self.divergence_bound:
                oscillating = sorted(set.union(*recent_keys[-2:]) if recent_keys else set())
                raise DivergenceGuard(passes, oscillating)
            pass_delta = self._run_pass(delta, at, sink)
            passes += 1
            if pass_delta.is_empty():
                break
            recent_keys.append(self._statement_keys(pass_delta))
            if len(recent_keys) > 4:
                recent_keys.pop(0)
            cumulative.merge(pass_delta)
            delta = pass_delta

        self.last_passes = passes
        self.last_fixpoint_seq = self.store.seq
        first = seed.origin_seq[0] or self.store.seq
        cumulative.origin_seq = (first, self.store.seq)
        return cumulative

    def _run_pass(self, delta: Delta, at: int,
                  sink: Optional[list[tuple[str, int]]]) -> Delta:
        pass_delta = Delta()
        touched = delta.kinds(self.store)
        strata = sorted({r.stratum for r in self.store.rules.values()})

        for stratum in strata:
            rules = sorted(
                (r for r in self.store.rules.values() if r.stratum == stratum),
                key=lambda r: r.rule_id,
            )
            touched |= pass_delta.kinds(self.store)
            evaluations = []
            for registration in rules:
                rule = self.bodies.get(registration.rule_id)
                if rule is None:
                    continue  # registered but no body bound; nothing to run
                if registration.rule_id not in self._forced and not (
                    rule.read_kinds & touched
                ):
                    continue
                desired = rule.body(Snapshot(self.store), delta)
                evaluations.append((rule, desired))
            for rule, desired in evaluations:
                self._forced.discard(rule.rule_id)
                changes = self._reconcile(rule, desired, at, sink)
                pass_delta.merge(changes)

        for contradiction in self.core.detect_contradictions(
            set(pass_delta.asserted), at
        ):
            active_parties = [
                p for p in contradiction.parties
                if (b := self.store.beliefs.get(p)) is not None and b.active
            ]
            if len(active_parties) < 2:
                continue
            resolution_sink: list[tuple[str, int]] = []
            self.core.resolve(contradiction, at, sink=resolution_sink, base_depth=1)
            for belief_id, depth in resolution_sink:
                pass_delta.note_retracted(belief_id)
                if sink is not None:
                    sink.append((belief_id, depth))
        return pass_delta

    def _reconcile(self, rule: Rule, desired: Iterable[Derivation], at: int,
                   sink: Optional[list[tuple[str, int]]]) -> Delta:
        changes = Delta()
        ordered = sorted(
            desired,
            key=lambda d: (
                _KIND_APPLY_ORDER.get(d.statement.kind, 9),
                d.statement.belief_id(),
            ),
        )
        desired_ids = set()
        for derivation in ordered:
            statement = derivation.statement
            belief_id = statement.belief_id()
            desired_ids.add(belief_id)
            cache_key = (rule.rule_id, rule.version, derivation.premises, belief_id)
            justification = self._justification_cache.get(cache_key)
            if justification is None:
                justification = Justification(
                    rule_id=rule.rule_id,
                    rule_version=rule.version,
                    premises=derivation.premises,
                    conclusion=belief_id,
                )
                self._justification_cache[cache_key] = justification
            _, outcome = self.store.assert_derived(statement, justification, at)
            if outcome in ("new", "resupported"):
                changes.note_asserted(belief_id)

        stale = []
        for kind in rule.write_kinds:
            for belief_id in self.store.active_by_kind[kind] - desired_ids:
                jids = self.store.by_conclusion.get(belief_id, [])
                if not any(
                    self.store.justifications[j].rule_id == rule.rule_id for j in jids
                ):
                    continue  # owned by some other rule
                if self._live_support_from_other_rule(belief_id, rule.rule_id):
                    continue
                stale.append(belief_id)
        for belief_id in sorted(stale):
            belief = self.store.beliefs.get(belief_id)
            if belief is None or not belief.active:
                continue
            cascade_sink: list[tuple[str, int]] = []
            self.core.retract_with_cascade(
                belief_id, f"no longer derived by {rule.rule_id}", at,
                base_depth=1, sink=cascade_sink,
            )
            for retracted_id, depth in cascade_sink:
                changes.note_retracted(retracted_id)
                if sink is not None:
                    sink.append((retracted_id, depth))
        return changes

    def _live_support_from_other_rule(self, belief_id: str, rule_id: str) -> bool:
        for jid in self.store.by_conclusion.get(belief_id, ()):
            justification = self.store.justifications[jid]
            if justification.rule_id == rule_id:
                continue
            if all(
                (b := self.store.beliefs.get(p)) is not None and b.active
                for p in justification.premises
            ):
                return True
        return False

    def _statement_keys(self, delta: Delta) -> set[str]:
        keys = set()
        for belief_id in delta.asserted | delta.retracted:
            belief = self.store.beliefs.get(belief_id)
            if belief is not None:
                keys.add(f"{belief.kind.value}:{belief_id}")
        return keys

    # --- oracles ------------------------------------------------------------------

    def full_recompute(self) -> BeliefStore:
        """Reference oracle: rebuild from only the explicit beliefs with the
        registered rules, in a scratch store. The live KB is untouched."""
        scratch_store = BeliefStore(EventLog())
        scratch_core = LogicalCore(scratch_store)
        scratch_engine = InferenceEngine(scratch_store, scratch_core, self.divergence_bound)

        for rule_id in sorted(self.store.rules):
            registration = self.store.rules[rule_id]
            bound = self.bodies.get(rule_id)
            if bound is None:
                continue
            scratch_engine.register_rule(bound, at=0)

        explicit = []
        for kind in EXPLICIT_KINDS:
            for belief in self.store.active(kind):
                explicit.append(belief)
        explicit.sort(key=lambda b: (b.provenance.asserted_at, b.kind.value, b.id))

        seed = Delta()
        for belief in explicit:
            belief_id, changed = scratch_store.assert_explicit(
                belief.statement, belief.provenance.source, belief.provenance.asserted_at
            )
            if changed:
                seed.note_asserted(belief_id)

        newest = max((b.provenance.asserted_at for b in explicit), default=0)
        for contradiction in scratch_core.detect_contradictions(seed.asserted, newest):
            scratch_core.resolve(contradiction, newest)
        scratch_engine.run_to_fixpoint(seed, at=newest)
        return scratch_store

    # --- status ----------------------------------------------------------------------

    def status(self) -> dict[str, int]:
        return {
            "last_fixpoint_seq": self.last_fixpoint_seq,
            "passes": self.last_passes,
            "derived_active": self.store.derived_active_count(),
            "contradictions_resolved": self.core.contradictions_resolved,
        }
