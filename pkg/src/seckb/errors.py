"""Exception hierarchy shared by all knowledge-base components."""

from __future__ import annotations


class SecKbError(Exception):
    """Base class for every error raised by this package."""


# --- storage -----------------------------------------------------------------

class SchemaViolation(SecKbError):
    """Statement payload does not validate against its kind's schema."""


class StorageFailure(SecKbError):
    """Event could not be durably appended; KB state is unchanged."""


class UnknownBelief(SecKbError):
    def __init__(self, belief_id: str):
        super().__init__(f"unknown belief: {belief_id}")
        self.belief_id = belief_id


class AlreadyRetracted(SecKbError):
    def __init__(self, belief_id: str):
        super().__init__(f"belief already retracted: {belief_id}")
        self.belief_id = belief_id


class CorruptLog(SecKbError):
    """Event log failed replay validation (gap, bad line, schema violation)."""

    def __init__(self, seq: int, detail: str = ""):
        msg = f"corrupt event log at seq {seq}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.seq = seq
        self.detail = detail


# --- justification graph -----------------------------------------------------

class DanglingPremise(SecKbError):
    def __init__(self, belief_id: str):
        super().__init__(f"premise is unknown or retracted: {belief_id}")
        self.belief_id = belief_id


class CycleDetected(SecKbError):
    def __init__(self, conclusion: str):
        super().__init__(f"justification would make {conclusion} depend on itself")
        self.conclusion = conclusion


# --- rule engine -------------------------------------------------------------

class UnknownRule(SecKbError):
    def __init__(self, rule_id: str):
        super().__init__(f"rule not registered: {rule_id}")
        self.rule_id = rule_id


class DuplicateRule(SecKbError):
    def __init__(self, rule_id: str, version: int):
        super().__init__(f"rule already registered: {rule_id} v{version}")
        self.rule_id = rule_id
        self.version = version


class StratificationViolation(SecKbError):
    def __init__(self, rule_id: str, conflicting_rule: str, kind: str):
        super().__init__(
            f"rule {rule_id} reads/writes kind {kind} in conflict with {conflicting_rule}"
        )
        self.rule_id = rule_id
        self.conflicting_rule = conflicting_rule
        self.kind = kind


class DivergenceGuard(SecKbError):
    """Fixpoint pass count exceeded the configured bound."""

    def __init__(self, passes: int, oscillating_keys: list[str]):
        super().__init__(
            f"fixpoint did not converge after {passes} passes; "
            f"oscillating statements: {oscillating_keys[:10]}"
        )
        self.passes = passes
        self.oscillating_keys = oscillating_keys


# --- report ingestion --------------------------------------------------------

class UnknownFormat(SecKbError):
    """Raw report is in no recognizable format; nothing was ingested."""


class MalformedReport(SecKbError):
    """Report-level parse failure. ``path`` names the offending JSON path."""

    def __init__(self, path: str, detail: str = ""):
        msg = f"malformed report at {path}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.path = path
        self.detail = detail


class UnknownSeverity(SecKbError):
    def __init__(self, value: str):
        super().__init__(f"unmapped severity value: {value!r}")
        self.value = value


# --- api ---------------------------------------------------------------------

class UnknownSubject(SecKbError):
    """Assessment subject does not resolve to an active issue or finding pair."""
