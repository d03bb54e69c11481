"""Exceptions for threatlang."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass


@dataclass(frozen=True)
class SourceLocation:
    """A 1-based line/column position in a source document."""

    line: int
    column: int

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


class ThreatLangError(Exception):
    """Base exception for threatlang errors."""


# -----------------------------------------------------------------------------
# Grammars
# -----------------------------------------------------------------------------


class GrammarError(ThreatLangError):
    """Formal-grammar error."""


class InvalidGrammar(GrammarError):
    """Grammar violates a structural invariant."""

    def __init__(self, message: str, rule_index: int | None = None) -> None:
        if rule_index is not None:
            message = f"rule {rule_index}: {message}"
        super().__init__(message)
        self.rule_index = rule_index


class GrammarSyntaxError(GrammarError):
    """Grammar text could not be parsed."""


class NotContextFree(GrammarError):
    """Operation requires a context-free grammar."""


class LimitExceeded(GrammarError):
    """A parse or enumeration bound fired before the result was complete."""


class DepthExceeded(GrammarError):
    """Every sampling attempt exceeded the depth bound."""


class NotNormalized(GrammarError):
    """Rule probabilities of a nonterminal do not sum to one."""


# -----------------------------------------------------------------------------
# Threat-modeling language
# -----------------------------------------------------------------------------


class LanguageError(ThreatLangError):
    """Threat-modeling language error, optionally tied to a source location."""

    def __init__(self, message: str, location: SourceLocation | None = None) -> None:
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class DslSyntaxError(LanguageError):
    """Language source is not well formed."""

    def __init__(
        self,
        message: str,
        location: SourceLocation | None = None,
        expected: Sequence[str] = (),
    ) -> None:
        if expected:
            message = f"{message} (expected one of: {', '.join(expected)})"
        super().__init__(message, location)
        self.expected = tuple(expected)


class ResolutionError(LanguageError):
    """A step, defense or role reference does not resolve."""

    def __init__(
        self,
        message: str,
        location: SourceLocation | None = None,
        candidates: Sequence[str] = (),
    ) -> None:
        if candidates:
            message = f"{message}; did you mean {', '.join(candidates)}?"
        super().__init__(message, location)
        self.candidates = tuple(candidates)


class DuplicateName(LanguageError):
    """A name is declared twice in the same scope."""


class ConflictError(LanguageError):
    """Two languages declare the same name with different bodies."""


# -----------------------------------------------------------------------------
# System models and compilation
# -----------------------------------------------------------------------------


class ModelError(ThreatLangError):
    """System model error."""


class ModelSchemaError(ModelError):
    """Model document does not follow the model schema."""


class UnknownAsset(ModelError):
    """Instance refers to an undeclared asset type."""


class UnknownDefense(ModelError):
    """Defense assignment names a defense the asset does not declare."""


class BadLink(ModelError):
    """Link violates its association's asset types or multiplicities."""


class UnresolvedEntry(ModelError):
    """Entry, target or impact does not name an existing instance step."""


class ExpansionError(ModelError):
    """Role expansion leaves an AND step with an unsatisfiable precondition."""


# -----------------------------------------------------------------------------
# Attack graphs and analyses
# -----------------------------------------------------------------------------


class GraphError(ThreatLangError):
    """Attack-graph error."""


class GraphSchemaError(GraphError):
    """Graph document or constructor input violates the graph invariants."""


class Unreachable(GraphError):
    """Target step cannot be reached."""


class NoCut(GraphError):
    """Target stays reachable even with every defense enabled."""


class StateSpaceExceeded(GraphError):
    """State enumeration would exceed its vertex cap."""


class UnsupportedFormat(GraphError):
    """Requested export format is not supported."""


# -----------------------------------------------------------------------------
# Time-to-compromise engine
# -----------------------------------------------------------------------------


class SimulationError(ThreatLangError):
    """Time-to-compromise engine error."""


class InvalidParameters(SimulationError):
    """Distribution parameters are outside the family's domain."""


class NegativeLocal(SimulationError):
    """A local TTC is negative."""


class MissingLocal(SimulationError):
    """A step has no local TTC."""


class NoEntry(SimulationError):
    """Graph has no entry steps to simulate from."""


class InvalidTrials(SimulationError):
    """Trial count must be at least one."""


class UnknownStep(SimulationError):
    """Step is not present in the report or graph."""


class NoAnnotatedTargets(SimulationError):
    """No target carries an impact annotation."""


# -----------------------------------------------------------------------------
# ATT&CK ingestion
# -----------------------------------------------------------------------------


class IngestError(ThreatLangError):
    """Technique catalog error."""


class SchemaError(IngestError):
    """Catalog document does not follow the catalog schema."""


class DuplicateTechnique(IngestError):
    """Two techniques share an id."""


class DanglingPrerequisite(IngestError):
    """Prerequisite names a technique missing from the catalog."""


class EmptyCatalog(IngestError):
    """Catalog has no techniques."""


class IdentifierCollision(IngestError):
    """Two catalog names sanitize to the same identifier."""
