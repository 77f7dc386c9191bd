"""seckb: a revisable knowledge base for security findings.

Scanner reports come in as explicit belief; inference rules derive
deduplicated, validated, prioritized issues; human assessments dominate and
revise machine conclusions, cascading through everything derived from them.
"""

from .engine import Delta, Derivation, InferenceEngine, Rule, Snapshot
from .errors import SecKbError
from .ingest import Finding, FormatKind, Location, RawReport, parse_report
from .kb import IngestResult, KnowledgeBase, replay_into
from .logic import Contradiction, LogicalCore, Resolution, RevisionReport
from .rules import DEFAULT_CONFIG, build_standard_rules, similarity
from .statements import (
    Belief,
    Provenance,
    Severity,
    SourceKind,
    SourceRef,
    Statement,
    StatementKind,
    StatementPattern,
)
from .store import BeliefStore, EventLog, Justification, KBEvent

__all__ = [
    "Belief",
    "BeliefStore",
    "Contradiction",
    "DEFAULT_CONFIG",
    "Delta",
    "Derivation",
    "EventLog",
    "Finding",
    "FormatKind",
    "InferenceEngine",
    "IngestResult",
    "Justification",
    "KBEvent",
    "KnowledgeBase",
    "Location",
    "LogicalCore",
    "Provenance",
    "RawReport",
    "Resolution",
    "RevisionReport",
    "Rule",
    "SecKbError",
    "Severity",
    "Snapshot",
    "SourceKind",
    "SourceRef",
    "Statement",
    "StatementKind",
    "StatementPattern",
    "build_standard_rules",
    "parse_report",
    "replay_into",
    "similarity",
]

__version__ = "0.1.0"
