"""Exception hierarchy shared across the workbench.

Every domain error derives from :class:`WorkbenchError` and carries a stable
``code`` string so the HTTP gateway and the CLI can map failures uniformly.
"""
from __future__ import annotations


class WorkbenchError(Exception):
    """Base class for all domain errors raised by workbench operations."""

    code = "workbench_error"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details

    def to_doc(self) -> dict:
        doc = {"code": self.code, "message": self.message}
        doc.update({k: v for k, v in self.details.items() if v is not None})
        return doc


# ---------------------------------------------------------------------------
# access control
# ---------------------------------------------------------------------------

class AccessDenied(WorkbenchError):
    code = "access_denied"

    def __init__(self, message: str = "access denied", rule: str | None = None):
        super().__init__(message, rule=rule)
        self.rule = rule


class MalformedRule(WorkbenchError):
    code = "malformed_rule"


class PolicyParseError(WorkbenchError):
    """Raised when an access-policy document cannot be parsed."""

    code = "policy_parse_error"

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        super().__init__(message, field=field, line=line)
        self.field = field
        self.line = line


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

class DuplicateName(WorkbenchError):
    code = "duplicate_name"


class UnknownBuiltin(WorkbenchError):
    code = "unknown_builtin"


class MissingComplianceDoc(WorkbenchError):
    code = "missing_compliance_doc"


class InvalidComplianceDoc(WorkbenchError):
    code = "invalid_compliance_doc"


class UnknownFunction(WorkbenchError):
    code = "unknown_function"


class InvalidRetention(WorkbenchError):
    code = "invalid_retention"


class NotFound(WorkbenchError):
    code = "not_found"


class InUse(WorkbenchError):
    code = "in_use"


class ValidationFailure(WorkbenchError):
    """A document failed structural validation; ``field`` is the offending path."""

    code = "validation_failure"

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message, field=field)
        self.field = field


# ---------------------------------------------------------------------------
# cleaning
# ---------------------------------------------------------------------------

class ConflictingRules(WorkbenchError):
    code = "conflicting_rules"


class UnknownRuleset(WorkbenchError):
    code = "unknown_ruleset"


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

class UnknownDataset(WorkbenchError):
    code = "unknown_dataset"


class WrongSourceKind(WorkbenchError):
    code = "wrong_source_kind"


class SourceParseError(WorkbenchError):
    code = "source_parse_error"

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message, line=line)
        self.line = line


class FunctionFailure(WorkbenchError):
    code = "function_failure"


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

class InfeasibleDegree(WorkbenchError):
    code = "infeasible_degree"


class DomainError(WorkbenchError):
    """A model input fell outside its declared domain."""

    code = "domain_error"


# ---------------------------------------------------------------------------
# policy trees and criteria
# ---------------------------------------------------------------------------

class StructureError(WorkbenchError):
    code = "structure_error"


class IdError(WorkbenchError):
    code = "id_error"


class CriterionParseError(WorkbenchError):
    code = "criterion_parse_error"

    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()):
        super().__init__(message, offset=offset, expected=list(expected))
        self.offset = offset
        self.expected = tuple(expected)


class CriterionEvalError(WorkbenchError):
    code = "criterion_eval_error"


class UnknownAttribute(CriterionEvalError):
    code = "unknown_attribute"


class UnknownParameter(CriterionEvalError):
    code = "unknown_parameter"


class MissingRequired(WorkbenchError):
    code = "missing_required"


class InvalidParam(WorkbenchError):
    code = "invalid_param"


# ---------------------------------------------------------------------------
# gateway
# ---------------------------------------------------------------------------

class UnknownToken(WorkbenchError):
    code = "unknown_token"


class UnknownRun(NotFound):
    code = "unknown_run"
