"""Standard rule pack: deduplicate findings into issues, validate issues
against human assessments, and prioritize what remains.

The rules form a pipeline over the explicit beliefs: dedup (stratum 1) groups
similar findings into issues via connected components, validation (stratum 2)
attaches a status from the newest targeting human assessment, prioritization
(stratum 3) scores and ranks everything not judged false positive or
mitigated. Every derived kind can be invalidated by later external input;
nothing is inferred that outside input could not overturn.
"""

from __future__ import annotations

import math
import re
from typing import Any, Iterable, Mapping, Optional

from .engine import Derivation, Rule, Snapshot
from .ingest import Finding
from .statements import (
    Severity,
    Statement,
    StatementKind,
    belief_id_for,
)

DEFAULT_CONFIG: dict[str, Any] = {
    "dedup": {"threshold": 0.70},
    "prioritize": {
        "weights": {"critical": 10.0, "high": 7.0, "medium": 4.0, "low": 1.0, "info": 0.1},
        "confirm_boost": 1.25,
    },
}

_TOKEN_RE = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> frozenset[str]:
    """Lowercase, split on non-alphanumeric runs, drop empties."""
    return frozenset(t for t in _TOKEN_RE.split(text.lower()) if t)


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 0.0
    union = len(a | b)
    if union == 0:
        return 0.0
    return len(a & b) / union


def similarity(a: Finding, b: Finding) -> float:
    """Score in [0, 1]: the better of title and description token overlap,
    forced to 1 for the same finding key or a shared CVE on one component."""
    if a.finding_key == b.finding_key:
        return 1.0
    if _shared_cve_component(
        a.identifiers, a.location.component, b.identifiers, b.location.component
    ):
        return 1.0
    return max(
        jaccard(tokenize(a.title), tokenize(b.title)),
        jaccard(tokenize(a.description), tokenize(b.description)),
    )


def _shared_cve_component(ids_a: Iterable[str], comp_a: Optional[str],
                          ids_b: Iterable[str], comp_b: Optional[str]) -> bool:
    if not comp_a or comp_a != comp_b:
        return False
    cves_a = {i for i in ids_a if i.startswith("CVE-")}
    cves_b = {i for i in ids_b if i.startswith("CVE-")}
    return bool(cves_a & cves_b)


class _FindingGroup:
    """All active observations of one finding_key, represented by the
    observation with the smallest belief id (stable under arrival order)."""

    __slots__ = ("key", "belief_ids", "rep_id", "title_tokens", "desc_tokens",
                 "category", "component", "cves", "severity", "title")

    def __init__(self, key: str, beliefs: list):
        beliefs = sorted(beliefs, key=lambda b: b.id)
        rep = beliefs[0]
        payload = rep.payload
        self.key = key
        self.belief_ids = frozenset(b.id for b in beliefs)
        self.rep_id = rep.id
        self.title = payload["title"]
        self.title_tokens = tokenize(payload["title"])
        self.desc_tokens = tokenize(payload["description"])
        self.category = payload["tool_category"]
        self.component = payload["location"].get("component")
        self.cves = frozenset(i for i in payload["identifiers"] if i.startswith("CVE-"))
        self.severity = payload["severity"]


def _group_findings(snapshot: Snapshot) -> dict[str, _FindingGroup]:
    groups = {}
    for key in snapshot.active_finding_keys():
        beliefs = snapshot.active_findings_for_key(key)
        if beliefs:
            groups[key] = _FindingGroup(key, beliefs)
    return groups


class _StatementIntern:
    """Reuse Statement instances across rule evaluations so their content
    hashes are computed once. Keys fully determine the payload."""

    def __init__(self):
        self._cache: dict[tuple, Statement] = {}

    def get(self, key: tuple, build) -> Statement:
        statement = self._cache.get(key)
        if statement is None:
            statement = build()
            self._cache[key] = statement
        return statement


def _not_duplicate_pairs(snapshot: Snapshot) -> set[tuple[str, str]]:
    pairs = set()
    for belief in snapshot.active(StatementKind.ASSESSMENT_MADE):
        if belief.payload["verdict"] == "not_duplicate":
            pairs.add(tuple(belief.payload["subject"]["pair"]))
    return pairs


class _UnionFind:
    def __init__(self, nodes: Iterable[str]):
        self.parent = {n: n for n in nodes}

    def find(self, node: str) -> str:
        root = node
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[node] != root:
            self.parent[node], node = root, self.parent[node]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if ra < rb:
                self.parent[rb] = ra
            else:
                self.parent[ra] = rb


def build_dedup_rule(config: Mapping[str, Any], version: int = 1) -> Rule:
    threshold = float(config.get("threshold", 0.70))
    score_cache: dict[tuple[str, str], float] = {}
    group_cache: dict[str, _FindingGroup] = {}
    index_cache: dict[str, Any] = {"generation": -1, "pairs": None}
    interned = _StatementIntern()
    generation = [0]

    def score(a: _FindingGroup, b: _FindingGroup) -> float:
        cache_key = (a.rep_id, b.rep_id) if a.rep_id < b.rep_id else (b.rep_id, a.rep_id)
        cached = score_cache.get(cache_key)
        if cached is None:
            if _shared_cve_component(a.cves, a.component, b.cves, b.component):
                cached = 1.0
            else:
                cached = max(
                    jaccard(a.title_tokens, b.title_tokens),
                    jaccard(a.desc_tokens, b.desc_tokens),
                )
            score_cache[cache_key] = cached
        return cached

    def groups_for(snapshot: Snapshot) -> dict[str, _FindingGroup]:
        """Rebuild only groups whose observation set changed since last run."""
        groups = {}
        changed = False
        active_keys = snapshot.active_finding_keys()
        for key in active_keys:
            beliefs = snapshot.active_findings_for_key(key)
            if not beliefs:
                continue
            ids = frozenset(b.id for b in beliefs)
            cached = group_cache.get(key)
            if cached is None or cached.belief_ids != ids:
                cached = _FindingGroup(key, beliefs)
                group_cache[key] = cached
                changed = True
            groups[key] = cached
        if changed or len(group_cache) != len(groups):
            for dead in set(group_cache) - set(groups):
                del group_cache[dead]
            generation[0] += 1
        return groups

    def candidate_pairs(groups: dict[str, _FindingGroup]) -> set[tuple[str, str]]:
        # Prefix filtering: J(a,b) >= t implies |shared| >= ceil(t*|a|), so two
        # qualifying sets must share a token among each one's (|s| - ceil(t*|s|)
        # + 1) rarest tokens under one global frequency order. Indexing only
        # those prefixes keeps postings short even with stopword-like tokens,
        # and is lossless for the threshold test. Pairs forced to score 1 by a
        # shared CVE on one component come from a separate index. The result
        # is valid until any group changes (tracked by generation).
        if index_cache["generation"] == generation[0]:
            return index_cache["pairs"]
        frequency: dict[str, int] = {}
        for group in groups.values():
            for token in group.title_tokens:
                frequency[token] = frequency.get(token, 0) + 1
            for token in group.desc_tokens:
                frequency[token] = frequency.get(token, 0) + 1

        pairs: set[tuple[str, str]] = set()
        for attr in ("title_tokens", "desc_tokens"):
            index: dict[tuple[str, str], list[str]] = {}
            for key in sorted(groups):
                group = groups[key]
                tokens = getattr(group, attr)
                if not tokens:
                    continue
                prefix_len = len(tokens) - math.ceil(threshold * len(tokens)) + 1
                prefix = sorted(tokens, key=lambda t: (frequency[t], t))[:prefix_len]
                for token in prefix:
                    index.setdefault((group.category, token), []).append(key)
            for keys in index.values():
                for i, a in enumerate(keys):
                    for b in keys[i + 1:]:
                        pairs.add((a, b) if a < b else (b, a))

        by_cve: dict[tuple[str, str, str], list[str]] = {}
        for key in sorted(groups):
            group = groups[key]
            if group.component:
                for cve in group.cves:
                    by_cve.setdefault((group.category, group.component, cve), []).append(key)
        for keys in by_cve.values():
            for i, a in enumerate(keys):
                for b in keys[i + 1:]:
                    pairs.add((a, b) if a < b else (b, a))

        index_cache["generation"] = generation[0]
        index_cache["pairs"] = pairs
        return pairs

    def body(snapshot: Snapshot, delta) -> list[Derivation]:
        groups = groups_for(snapshot)
        suppressed = _not_duplicate_pairs(snapshot)
        linked = _UnionFind(groups)
        edges = []
        for a, b in sorted(candidate_pairs(groups)):
            if (a, b) in suppressed:
                continue
            if score(groups[a], groups[b]) >= threshold:
                edges.append((a, b))
                linked.union(a, b)

        out = []
        edge_ids: dict[tuple[str, str], str] = {}
        for a, b in edges:
            statement = interned.get(
                ("dup", a, b),
                lambda: Statement(StatementKind.DUPLICATE_OF, {"a": a, "b": b}),
            )
            edge_ids[(a, b)] = statement.belief_id()
            out.append(
                Derivation(statement, groups[a].belief_ids | groups[b].belief_ids)
            )

        components: dict[str, list[str]] = {}
        for key in groups:
            components.setdefault(linked.find(key), []).append(key)
        for members in components.values():
            members.sort()
            canonical = members[0]
            member_set = set(members)
            observation_ids = frozenset(
                i for m in members for i in groups[m].belief_ids
            )
            intra_edges = frozenset(
                edge_ids[(a, b)] for a, b in edges if a in member_set and b in member_set
            )
            issue_statement = interned.get(
                ("issue", canonical),
                lambda: Statement(StatementKind.ISSUE_EXISTS, {"canonical": canonical}),
            )
            issue_id = issue_statement.belief_id()
            out.append(Derivation(issue_statement, observation_ids | intra_edges))
            for member in members:
                out.append(
                    Derivation(
                        interned.get(
                            ("member", canonical, member),
                            lambda: Statement(
                                StatementKind.ISSUE_MEMBER,
                                {"issue": canonical, "finding_key": member},
                            ),
                        ),
                        frozenset({issue_id}) | groups[member].belief_ids,
                    )
                )
        return out

    return Rule(
        rule_id="dedup",
        version=version,
        stratum=1,
        read_kinds=frozenset({StatementKind.FINDING_OBSERVED, StatementKind.ASSESSMENT_MADE}),
        write_kinds=frozenset(
            {StatementKind.DUPLICATE_OF, StatementKind.ISSUE_EXISTS, StatementKind.ISSUE_MEMBER}
        ),
        config={"threshold": threshold},
        body=body,
    )


def _issue_members(snapshot: Snapshot) -> dict[str, list[str]]:
    members: dict[str, list[str]] = {}
    for belief in snapshot.active(StatementKind.ISSUE_MEMBER):
        members.setdefault(belief.payload["issue"], []).append(belief.payload["finding_key"])
    for keys in members.values():
        keys.sort()
    return members


def _targeting_assessments(snapshot: Snapshot, verdicts: frozenset[str]):
    """Active human assessments keyed by the finding they target."""
    by_key: dict[str, list] = {}
    for belief in snapshot.active(StatementKind.ASSESSMENT_MADE):
        if belief.payload["verdict"] not in verdicts:
            continue
        target = belief.payload["subject"].get("finding_key")
        if target:
            by_key.setdefault(target, []).append(belief)
    return by_key


def _newest(assessments: list) -> Any:
    # newest by payload timestamp; among equal timestamps the smaller id wins,
    # mirroring the contradiction-resolution tiebreak
    return sorted(assessments, key=lambda b: (-b.payload["at"], b.id))[0]


_VERDICT_TO_STATUS = {
    "false_positive": "false_positive",
    "confirmed": "confirmed",
    "mitigated": "mitigated",
}

_STATUS_VERDICT_SET = frozenset(_VERDICT_TO_STATUS)


def build_validate_rule(config: Mapping[str, Any], version: int = 1) -> Rule:
    interned = _StatementIntern()

    def body(snapshot: Snapshot, delta) -> list[Derivation]:
        members = _issue_members(snapshot)
        targeting = _targeting_assessments(snapshot, _STATUS_VERDICT_SET)
        out = []
        for issue_belief in sorted(
            snapshot.active(StatementKind.ISSUE_EXISTS), key=lambda b: b.payload["canonical"]
        ):
            canonical = issue_belief.payload["canonical"]
            hits = [
                a
                for key in members.get(canonical, [canonical])
                for a in targeting.get(key, [])
            ]
            if hits:
                winner = _newest(hits)
                status = _VERDICT_TO_STATUS[winner.payload["verdict"]]
                premises = frozenset({issue_belief.id, winner.id})
            else:
                status = "unreviewed"
                premises = frozenset({issue_belief.id})
            out.append(
                Derivation(
                    interned.get(
                        (canonical, status),
                        lambda: Statement(
                            StatementKind.VALIDATION_STATUS,
                            {"issue": canonical, "status": status},
                        ),
                    ),
                    premises,
                )
            )
        return out

    return Rule(
        rule_id="validate",
        version=version,
        stratum=2,
        read_kinds=frozenset(
            {StatementKind.ISSUE_EXISTS, StatementKind.ISSUE_MEMBER, StatementKind.ASSESSMENT_MADE}
        ),
        write_kinds=frozenset({StatementKind.VALIDATION_STATUS}),
        config=dict(config),
        body=body,
    )


def build_prioritize_rule(config: Mapping[str, Any], version: int = 1) -> Rule:
    weights = {
        k: float(v)
        for k, v in {**DEFAULT_CONFIG["prioritize"]["weights"],
                     **config.get("weights", {})}.items()
    }
    confirm_boost = float(config.get("confirm_boost", 1.25))
    formula_version = int(config.get("formula_version", 1))
    interned = _StatementIntern()

    def body(snapshot: Snapshot, delta) -> list[Derivation]:
        members = _issue_members(snapshot)
        overrides = _targeting_assessments(snapshot, frozenset({"severity_override"}))
        statuses: dict[str, list] = {}
        for belief in snapshot.active(StatementKind.VALIDATION_STATUS):
            statuses.setdefault(belief.payload["issue"], []).append(belief)

        scored = []
        for issue_belief in snapshot.active(StatementKind.ISSUE_EXISTS):
            canonical = issue_belief.payload["canonical"]
            issue_members = members.get(canonical, [canonical])
            status_beliefs = statuses.get(canonical)
            if not status_beliefs:
                continue  # validation has not caught up; next pass will
            status_belief = min(status_beliefs, key=lambda b: b.id)
            status = status_belief.payload["status"]
            if status in ("false_positive", "mitigated"):
                continue

            observations = [
                b for key in issue_members for b in snapshot.active_findings_for_key(key)
            ]
            if not observations:
                continue
            severity = max(
                (Severity(b.payload["severity"]) for b in observations),
                key=lambda s: s.rank,
            )
            override_hits = [
                a for key in issue_members for a in overrides.get(key, [])
            ]
            premises = {issue_belief.id, status_belief.id}
            if override_hits:
                override = _newest(override_hits)
                severity = Severity(override.payload["level"])
                premises.add(override.id)
            occurrence = len(
                {
                    (b.payload["report_ref"]["pipeline_run_id"],
                     b.payload["report_ref"]["report_hash"])
                    for b in observations
                }
            )
            boost = confirm_boost if status == "confirmed" else 1.0
            score = weights[severity.value] * (1.0 + math.log(occurrence)) * boost
            issue_key = belief_id_for(
                StatementKind.ISSUE_EXISTS, {"canonical": canonical}
            )
            scored.append((score, issue_key, canonical, frozenset(premises)))

        scored.sort(key=lambda item: (-item[0], item[1]))
        out = []
        for rank, (score, _issue_key, canonical, premises) in enumerate(scored, start=1):
            out.append(
                Derivation(
                    interned.get(
                        (canonical, score, rank),
                        lambda: Statement(
                            StatementKind.PRIORITY_ASSIGNED,
                            {
                                "issue": canonical,
                                "score": score,
                                "rank": rank,
                                "formula_version": formula_version,
                            },
                        ),
                    ),
                    premises,
                )
            )
        return out

    return Rule(
        rule_id="prioritize",
        version=version,
        stratum=3,
        read_kinds=frozenset(
            {
                StatementKind.ISSUE_EXISTS,
                StatementKind.ISSUE_MEMBER,
                StatementKind.VALIDATION_STATUS,
                StatementKind.ASSESSMENT_MADE,
                StatementKind.FINDING_OBSERVED,
            }
        ),
        write_kinds=frozenset({StatementKind.PRIORITY_ASSIGNED}),
        config={"weights": weights, "confirm_boost": confirm_boost,
                "formula_version": formula_version},
        body=body,
    )


def build_standard_rules(config: Optional[Mapping[str, Any]] = None,
                         versions: Optional[Mapping[str, int]] = None) -> list[Rule]:
    config = config or {}
    merged = {
        "dedup": {**DEFAULT_CONFIG["dedup"], **config.get("dedup", {})},
        "prioritize": {
            **DEFAULT_CONFIG["prioritize"],
            **config.get("prioritize", {}),
            "weights": {
                **DEFAULT_CONFIG["prioritize"]["weights"],
                **config.get("prioritize", {}).get("weights", {}),
            },
        },
    }
    versions = versions or {}
    return [
        build_dedup_rule(merged["dedup"], versions.get("dedup", 1)),
        build_validate_rule({}, versions.get("validate", 1)),
        build_prioritize_rule(merged["prioritize"], versions.get("prioritize", 1)),
    ]


RULE_BUILDERS = {
    "dedup": build_dedup_rule,
    "validate": build_validate_rule,
    "prioritize": build_prioritize_rule,
}
