"""Shared fixtures and scenario builders.

Reports are built as plain dicts and serialized; every expected value a test
asserts against is either trivially implied by the input or computed by hand
(token sets and Jaccard ratios are spelled out where they matter).
"""

from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from seckb import KnowledgeBase, RawReport
from seckb.ingest import FormatKind

FIXTURES = Path(__file__).parent / "fixtures"


def load_fixture_bytes(name: str) -> bytes:
    return (FIXTURES / name).read_bytes()


def make_raw(data: bytes, run_id: str = "run-1", at: int = 1_000,
             declared: FormatKind | None = None) -> RawReport:
    return RawReport(
        data=data, pipeline_run_id=run_id, received_at=at, declared_format=declared
    )


def generic_report(tool: str, category: str, findings: list[dict]) -> bytes:
    return json.dumps({"tool": tool, "category": category, "findings": findings}).encode()


def generic_finding(title: str, severity: str = "high", path: str | None = None,
                    endpoint: str | None = None, component: str | None = None,
                    description: str = "", ids: list[str] | None = None,
                    line: int | None = None) -> dict:
    entry: dict = {"title": title, "severity": severity, "description": description}
    if path is not None:
        entry["path"] = path
    if endpoint is not None:
        entry["endpoint"] = endpoint
    if component is not None:
        entry["component"] = component
    if ids is not None:
        entry["ids"] = ids
    if line is not None:
        entry["line"] = line
    return entry


@pytest.fixture
def kb() -> KnowledgeBase:
    return KnowledgeBase()


# Titles with hand-controlled token sets. Base tokens shared 6-wide:
#   A = {sql, injection, vulnerability, in, login, handler, form}   (7 tokens)
#   B = {sql, injection, vulnerability, in, login, handler, page}   (7 tokens)
#   C = {sql, injection, vulnerability, in, login, page, detected}  (7 tokens)
# J(A,B) = 6/8 = 0.75, J(B,C) = 6/8 = 0.75, J(A,C) = 5/9 = 0.556 -> one
# component {A, B, C} through the A-B and B-C edges at threshold 0.70.
CHAIN_TITLE_A = "sql injection vulnerability in login handler form"
CHAIN_TITLE_B = "sql injection vulnerability in login handler page"
CHAIN_TITLE_C = "sql injection vulnerability in login page detected"


def chain_report(run_id: str = "run-1") -> bytes:
    return generic_report(
        "scanx",
        "SAST",
        [
            generic_finding(CHAIN_TITLE_A, path="app/a.py"),
            generic_finding(CHAIN_TITLE_B, path="app/b.py"),
            generic_finding(CHAIN_TITLE_C, path="app/c.py"),
        ],
    )


def ingest_bytes(kb: KnowledgeBase, data: bytes, run_id: str = "run-1",
                 at: int = 1_000):
    return kb.ingest_report(make_raw(data, run_id=run_id, at=at))


# --- confluence corpus: five small reports with cross-report overlap ----------

_WORDS = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf",
    "hotel", "india", "juliett", "kilo", "lima", "mike",
]


def confluence_corpus() -> list[tuple[str, bytes]]:
    """(run_id, report bytes) for five reports; two generic SAST reports share
    similar titles, the two dependency reports share a CVE on one component."""
    sarif = load_fixture_bytes("sarif_small.json")
    vst = load_fixture_bytes("vst_small.json")
    sast_one = generic_report(
        "lintsec",
        "SAST",
        [
            generic_finding(CHAIN_TITLE_A, path="svc/auth.py", severity="critical"),
            generic_finding("weak hash algorithm md5 used for passwords",
                            path="svc/hash.py", severity="medium"),
        ],
    )
    sast_two = generic_report(
        "lintsec",
        "SAST",
        [
            generic_finding(CHAIN_TITLE_B, path="svc/auth2.py", severity="high"),
            generic_finding("weak hash algorithm md5 used for passwords",
                            path="svc/hash.py", severity="medium"),
        ],
    )
    vst_two = json.dumps(
        {
            "tool": "composcan",
            "dependencies": [
                {
                    "component": "libfoo",
                    "version": "1.2",
                    "vulns": [
                        {"id": "CVE-2021-0001", "severity": "critical",
                         "summary": "heap overflow reachable from network"}
                    ],
                }
            ],
        }
    ).encode()
    # five reports: sast1/sast2 overlap on a similar title and a shared
    # finding key; vst/vst_two merge through the shared CVE on libfoo@1.2
    return [
        ("run-sarif", sarif),
        ("run-vst", vst),
        ("run-sast1", sast_one),
        ("run-sast2", sast_two),
        ("run-vst2", vst_two),
    ]


# --- randomized event sequences (oracle equivalence / dominance) ---------------

VULN_PHRASES = [
    "sql injection in {mod} request parser",
    "cross site scripting in {mod} template output",
    "path traversal reading {mod} configuration file",
    "hardcoded credential inside {mod} deployment script",
    "insecure deserialization of {mod} session payload",
    "weak random token generation for {mod} reset flow",
]

MODULES = ["billing", "auth", "search", "export", "admin", "gateway"]


class ScenarioDriver:
    """Applies a deterministic random event sequence to a KB while tracking
    enough ground truth to check the human-dominance property afterwards."""

    def __init__(self, seed: int):
        self.rng = random.Random(seed)
        self.kb = KnowledgeBase()
        self.at = 1_000
        self.run_counter = 0
        self.fp_marked: dict[str, int] = {}   # finding_key -> newest fp time
        self.later_verdicts: dict[str, int] = {}  # finding_key -> newest non-fp time

    def tick(self) -> int:
        self.at += 7
        return self.at

    def random_report(self) -> bytes:
        count = self.rng.randint(1, 4)
        findings = []
        for _ in range(count):
            phrase = self.rng.choice(VULN_PHRASES)
            module = self.rng.choice(MODULES)
            title = phrase.format(mod=module)
            path = f"src/{module}/{self.rng.randint(1, 3)}.py"
            severity = self.rng.choice(["critical", "high", "medium", "low", "info"])
            findings.append(generic_finding(title, severity=severity, path=path))
        return generic_report("fuzztool", "SAST", findings)

    def step_ingest(self):
        self.run_counter += 1
        data = self.random_report()
        self.kb.ingest_report(
            make_raw(data, run_id=f"run-{self.run_counter}", at=self.tick())
        )

    def step_assess(self):
        views = self.kb.issue_views()
        if not views:
            return
        view = self.rng.choice(views)
        verdict = self.rng.choice(
            ["false_positive", "confirmed", "mitigated", "severity_override",
             "not_duplicate"]
        )
        at = self.tick()
        if verdict == "not_duplicate":
            candidates = [v for v in views if len(v["members"]) >= 2]
            if not candidates:
                return
            view = self.rng.choice(candidates)
            pair = sorted(self.rng.sample(view["members"], 2))
            self.kb.submit_assessment(pair, "not_duplicate", author="erin", at=at)
            return
        level = self.rng.choice(["critical", "low"]) if verdict == "severity_override" else None
        self.kb.submit_assessment(
            view["issue_key"], verdict, author="erin", at=at, level=level
        )
        target = self._canonical_of(view)
        if verdict == "false_positive":
            self.fp_marked[target] = at
        elif verdict in ("confirmed", "mitigated"):
            self.later_verdicts[target] = at

    def _canonical_of(self, view) -> str:
        return view["members"][0]

    def step_replace_rule(self):
        threshold = self.rng.choice([0.5, 0.7, 0.9])
        boost = self.rng.choice([1.25, 1.5])
        self.kb.replace_rule_config(
            {"dedup": {"threshold": threshold},
             "prioritize": {"confirm_boost": boost}},
            at=self.tick(),
        )

    def run(self, length: int, audit_every_step: bool = True) -> None:
        for _ in range(length):
            op = self.rng.random()
            if op < 0.55:
                self.step_ingest()
            elif op < 0.9:
                self.step_assess()
            else:
                self.step_replace_rule()
            if audit_every_step:
                assert self.kb.well_founded_audit() == []
