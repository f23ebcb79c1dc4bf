"""Rule-driven validation, cleaning, and verification of records.

The workflow has four phases. A record's text content is first matched
against per-domain word lexicons to identify which policy domain it belongs
to; domain-specific default rules are then overlaid onto the user's rules and
compiled into an ordered constraint plan; validation lists every violated
constraint; cleaning applies each violated constraint's repair action in plan
order; verification re-validates the cleaned record and checks schema type
conformance. A record is kept only if no mandatory violations remain.

Repair actions: drop the whole record, drop the offending field, replace the
value with a configured default, or predict a value from the trailing window
of recently kept values (arithmetic mean for numbers, most frequent value
otherwise, falling back to the configured default when no history exists).
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field as dc_field
from typing import Callable, Mapping, Sequence

from .errors import ConflictingRules, InvalidParam
from .jsonutil import parse_rfc3339

KNOWN_DOMAINS = (
    "education", "finance", "healthcare", "industry", "labour",
    "radicalization", "security", "smart_cities", "winery",
)
GENERIC_DOMAIN = "generic"

VALUE_TYPES = ("integer", "real", "text", "boolean", "timestamp")
SEVERITIES = ("mandatory", "optional")
CONSTRAINTS = ("required", "value_type", "length", "range", "uniqueness",
               "uniformity", "cross_field")
ACTIONS = ("delete_record", "delete_field", "replace", "predict")
STRATEGIES = ("mean", "mode")
RELATIONS = ("lt", "le", "gt", "ge", "eq", "neq")

DEFAULT_WINDOW = 50
DEFAULT_MIN_SCORE = 0.25

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


# ---------------------------------------------------------------------------
# value typing
# ---------------------------------------------------------------------------

def value_conforms(value, type_name: str) -> bool:
    """Whether a concrete value matches a declared field type."""
    if type_name == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if type_name == "real":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if type_name == "text":
        return isinstance(value, str)
    if type_name == "boolean":
        return isinstance(value, bool)
    if type_name == "timestamp":
        if not isinstance(value, str):
            return False
        try:
            parse_rfc3339(value)
            return True
        except ValueError:
            return False
    raise InvalidParam(f"unknown value type {type_name!r}")


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


# ---------------------------------------------------------------------------
# domain identification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainLexicon:
    domain: str
    words: frozenset


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every non-alphanumeric run. No stemming."""
    return [tok for tok in _TOKEN_SPLIT.split(text.lower()) if tok]


def identify_domain(texts, lexicons: Sequence[DomainLexicon],
                    min_score: float = DEFAULT_MIN_SCORE) -> tuple[str, float]:
    """Score each domain as |tokens ∩ lexicon| / |tokens| over the deduplicated
    token set and return the best (domain, score). Ties break toward the
    lexicographically smaller domain name; a best score below ``min_score``
    (or an empty token stream) yields the generic domain."""
    if isinstance(texts, str):
        texts = [texts]
    tokens: set[str] = set()
    for text in texts:
        tokens.update(tokenize(text))
    if not tokens:
        return GENERIC_DOMAIN, 0.0
    best_domain = GENERIC_DOMAIN
    best_score = 0.0
    for lexicon in sorted(lexicons, key=lambda lx: lx.domain):
        score = len(tokens & lexicon.words) / len(tokens)
        if score > best_score:
            best_domain, best_score = lexicon.domain, score
    if best_score < min_score:
        return GENERIC_DOMAIN, best_score
    return best_domain, best_score


def load_lexicon_file(path, domain: str) -> DomainLexicon:
    words = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            token = line.strip().lower()
            if token and not token.startswith("#"):
                words.add(token)
    return DomainLexicon(domain, frozenset(words))


def load_lexicon_dir(dirpath) -> dict[str, DomainLexicon]:
    """Load ``<domain>.txt`` files from a directory, one token per line."""
    from pathlib import Path

    lexicons: dict[str, DomainLexicon] = {}
    for path in sorted(Path(dirpath).glob("*.txt")):
        lexicons[path.stem] = load_lexicon_file(path, path.stem)
    return lexicons


# ---------------------------------------------------------------------------
# rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CleanAction:
    kind: str
    default: object = None
    strategy: str | None = None

    def __post_init__(self):
        if self.kind not in ACTIONS:
            raise InvalidParam(f"unknown action {self.kind!r}")
        if self.kind == "replace" and self.default is None:
            raise InvalidParam("replace needs a default value")
        if self.kind == "predict" and self.strategy not in STRATEGIES:
            raise InvalidParam("predict needs strategy 'mean' or 'mode'")


@dataclass(frozen=True)
class ValidationRule:
    field: str
    constraint: str
    severity: str = "mandatory"
    action: CleanAction = dc_field(default_factory=lambda: CleanAction("delete_record"))
    value_type: str | None = None
    min: float | None = None
    max: float | None = None
    allowed: tuple | None = None
    other_field: str | None = None
    relation: str | None = None

    def __post_init__(self):
        if not self.field:
            raise InvalidParam("rule needs a field name")
        if self.constraint not in CONSTRAINTS:
            raise InvalidParam(f"unknown constraint {self.constraint!r}")
        if self.severity not in SEVERITIES:
            raise InvalidParam(f"severity must be one of {SEVERITIES}")
        if self.constraint == "value_type":
            if self.value_type not in VALUE_TYPES:
                raise InvalidParam(f"value_type must be one of {VALUE_TYPES}")
            if (self.action.kind == "replace"
                    and not value_conforms(self.action.default, self.value_type)):
                raise InvalidParam(
                    f"replace default {self.action.default!r} does not conform "
                    f"to {self.value_type}")
        if self.constraint in ("length", "range"):
            if self.min is None and self.max is None:
                raise InvalidParam(f"{self.constraint} needs min and/or max")
            if self.min is not None and self.max is not None and self.min > self.max:
                raise InvalidParam(f"{self.constraint} bounds are inverted")
        if self.constraint == "uniformity" and not self.allowed:
            raise InvalidParam("uniformity needs a non-empty allowed set")
        if self.constraint == "cross_field":
            if not self.other_field:
                raise InvalidParam("cross_field needs other_field")
            if self.relation not in RELATIONS:
                raise InvalidParam(f"relation must be one of {RELATIONS}")

    @property
    def key(self) -> tuple[str, str]:
        return (self.field, self.constraint)

    @staticmethod
    def from_doc(doc: Mapping) -> "ValidationRule":
        action_kind = doc.get("action", "delete_record")
        action = CleanAction(action_kind, default=doc.get("default"),
                             strategy=doc.get("strategy"))
        allowed = doc.get("allowed")
        return ValidationRule(
            field=doc.get("field", ""),
            constraint=doc.get("constraint", ""),
            severity=doc.get("severity", "mandatory"),
            action=action,
            value_type=doc.get("type"),
            min=doc.get("min"),
            max=doc.get("max"),
            allowed=tuple(allowed) if allowed is not None else None,
            other_field=doc.get("other_field"),
            relation=doc.get("relation"),
        )

    def to_doc(self) -> dict:
        doc = {"field": self.field, "constraint": self.constraint,
               "severity": self.severity, "action": self.action.kind}
        if self.action.default is not None:
            doc["default"] = self.action.default
        if self.action.strategy is not None:
            doc["strategy"] = self.action.strategy
        if self.value_type is not None:
            doc["type"] = self.value_type
        if self.min is not None:
            doc["min"] = self.min
        if self.max is not None:
            doc["max"] = self.max
        if self.allowed is not None:
            doc["allowed"] = list(self.allowed)
        if self.other_field is not None:
            doc["other_field"] = self.other_field
        if self.relation is not None:
            doc["relation"] = self.relation
        return doc


def parse_rules(docs: Sequence[Mapping]) -> list[ValidationRule]:
    return [ValidationRule.from_doc(doc) for doc in docs]


def load_rule_pack(path) -> list[ValidationRule]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, list):
        raise InvalidParam(f"rule pack {path} must be a JSON array")
    return parse_rules(doc)


@dataclass(frozen=True)
class ConstraintPlan:
    domain: str
    entries: tuple[ValidationRule, ...]
    window: int = DEFAULT_WINDOW


def compile_rules(rules: Sequence[ValidationRule], domain: str,
                  overlay: Sequence[ValidationRule] | None = None,
                  window: int = DEFAULT_WINDOW) -> ConstraintPlan:
    """Merge user rules with the domain overlay into an ordered plan.

    User rules keep their declaration order and shadow overlay rules for the
    same (field, constraint). Two differing user rules for the same pair are
    a configuration error.
    """
    entries: list[ValidationRule] = []
    seen: dict[tuple[str, str], ValidationRule] = {}
    for rule in rules:
        prior = seen.get(rule.key)
        if prior is not None:
            if prior != rule:
                raise ConflictingRules(
                    f"conflicting rules for {rule.field}.{rule.constraint}: "
                    f"{prior.action.kind} vs {rule.action.kind}")
            continue
        seen[rule.key] = rule
        entries.append(rule)
    for rule in overlay or []:
        if rule.key not in seen:
            seen[rule.key] = rule
            entries.append(rule)
    return ConstraintPlan(domain=domain, entries=tuple(entries), window=window)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    field: str
    constraint: str
    severity: str
    observed: object = None

    def to_doc(self) -> dict:
        return {"field": self.field, "constraint": self.constraint,
                "severity": self.severity, "observed": self.observed}


def _compare(value, other, relation: str) -> bool:
    if _is_number(value) and _is_number(other):
        left, right = value, other
    elif isinstance(value, str) and isinstance(other, str):
        try:
            left, right = parse_rfc3339(value), parse_rfc3339(other)
        except ValueError:
            left, right = value, other
    else:
        return False  # incomparable values never satisfy the relation
    if relation == "lt":
        return left < right
    if relation == "le":
        return left <= right
    if relation == "gt":
        return left > right
    if relation == "ge":
        return left >= right
    if relation == "eq":
        return left == right
    return left != right


def _violated(rule: ValidationRule, fields: Mapping,
              uniqueness: Callable[[str, object], bool] | None) -> bool:
    present = rule.field in fields and fields[rule.field] is not None
    if rule.constraint == "required":
        return not present
    if not present:
        return False  # absence is only an error for 'required'
    value = fields[rule.field]
    if rule.constraint == "value_type":
        return not value_conforms(value, rule.value_type)
    if rule.constraint == "length":
        if not isinstance(value, str):
            return True
        if rule.min is not None and len(value) < rule.min:
            return True
        return rule.max is not None and len(value) > rule.max
    if rule.constraint == "range":
        if not _is_number(value):
            return True
        if rule.min is not None and value < rule.min:
            return True
        return rule.max is not None and value > rule.max
    if rule.constraint == "uniqueness":
        return uniqueness is not None and uniqueness(rule.field, value)
    if rule.constraint == "uniformity":
        return value not in rule.allowed
    # cross_field
    other = fields.get(rule.other_field)
    if other is None:
        return False
    return not _compare(value, other, rule.relation)


def validate(record: Mapping, plan: ConstraintPlan,
             uniqueness: Callable[[str, object], bool] | None = None) -> list[Violation]:
    """List violated constraints in plan order (at most one per plan entry)."""
    violations = []
    for rule in plan.entries:
        if _violated(rule, record, uniqueness):
            violations.append(Violation(rule.field, rule.constraint,
                                        rule.severity,
                                        observed=record.get(rule.field)))
    return violations


# ---------------------------------------------------------------------------
# cleaning
# ---------------------------------------------------------------------------

@dataclass
class CleanOutcome:
    status: str  # "kept" | "dropped"
    record: dict | None
    applied_actions: list[tuple[str, str, str]]  # (field, constraint, action)

    @property
    def kept(self) -> bool:
        return self.status == "kept"


def _predict_value(rule: ValidationRule, history: Sequence, window: int):
    recent = list(history)[-window:] if history else []
    if rule.action.strategy == "mean":
        numbers = [v for v in recent if _is_number(v)]
        if not numbers:
            return None
        mean = sum(numbers) / len(numbers)
        if all(isinstance(v, int) for v in numbers):
            return round(mean)
        return mean
    if not recent:
        return None
    counts: dict = {}
    for value in recent:
        counts[value] = counts.get(value, 0) + 1
    best = sorted(counts.items(), key=lambda kv: (-kv[1], str(kv[0])))
    return best[0][0]


def clean(record: Mapping, violations: Sequence[Violation], plan: ConstraintPlan,
          history: Mapping[str, Sequence] | None = None,
          uniqueness: Callable[[str, object], bool] | None = None) -> CleanOutcome:
    """Apply repair actions for the given violations, in plan order.

    Each action is re-checked against the partially cleaned record first, so
    a repair that already resolved a later violation is not applied twice.
    ``delete_record`` stops processing immediately.
    """
    violated_keys = {(v.field, v.constraint) for v in violations}
    fields = dict(record)
    applied: list[tuple[str, str, str]] = []
    for rule in plan.entries:
        if rule.key not in violated_keys:
            continue
        if not _violated(rule, fields, uniqueness):
            continue
        action = rule.action
        if action.kind == "delete_record":
            applied.append((rule.field, rule.constraint, "delete_record"))
            return CleanOutcome("dropped", None, applied)
        if action.kind == "delete_field":
            fields.pop(rule.field, None)
            applied.append((rule.field, rule.constraint, "delete_field"))
            continue
        if action.kind == "replace":
            fields[rule.field] = action.default
            applied.append((rule.field, rule.constraint, "replace"))
            continue
        # predict
        series = (history or {}).get(rule.field) or []
        predicted = _predict_value(rule, series, plan.window)
        if predicted is None:
            predicted = action.default
        if predicted is None:
            fields.pop(rule.field, None)
            applied.append((rule.field, rule.constraint, "delete_field"))
        else:
            fields[rule.field] = predicted
            applied.append((rule.field, rule.constraint, "predict"))
    return CleanOutcome("kept", fields, applied)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

@dataclass
class VerifyReport:
    passed: bool
    residual: list[Violation]


def verify(outcome: CleanOutcome, plan: ConstraintPlan,
           schema_types: Mapping[str, str],
           uniqueness: Callable[[str, object], bool] | None = None) -> VerifyReport:
    """Re-validate a cleaned record and check schema type conformance.

    Passes exactly when no mandatory violations remain; optional residuals
    are reported but do not block."""
    if not outcome.kept or outcome.record is None:
        return VerifyReport(False, [])
    residual = validate(outcome.record, plan, uniqueness=uniqueness)
    for name, value in outcome.record.items():
        type_name = schema_types.get(name)
        if type_name is not None and value is not None:
            if not value_conforms(value, type_name):
                residual.append(Violation(name, "schema_type", "mandatory",
                                          observed=value))
    passed = not any(v.severity == "mandatory" for v in residual)
    return VerifyReport(passed, residual)


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

class CleaningEngine:
    """Holds lexicons and domain rule packs; runs the full record workflow."""

    def __init__(self, lexicons: Mapping[str, DomainLexicon] | None = None,
                 rule_packs: Mapping[str, Sequence[ValidationRule]] | None = None,
                 min_score: float = DEFAULT_MIN_SCORE,
                 window: int = DEFAULT_WINDOW):
        self.lexicons = dict(lexicons or {})
        self.rule_packs = {k: list(v) for k, v in (rule_packs or {}).items()}
        self.min_score = min_score
        self.window = window
        self._plans: dict = {}

    def identify(self, fields: Mapping) -> str:
        texts = [v for v in fields.values() if isinstance(v, str)]
        domain, _score = identify_domain(texts, list(self.lexicons.values()),
                                         self.min_score)
        return domain

    def plan_for(self, rules: Sequence[ValidationRule], domain: str) -> ConstraintPlan:
        key = (tuple(rules), domain)
        plan = self._plans.get(key)
        if plan is None:
            overlay = self.rule_packs.get(domain)
            plan = compile_rules(rules, domain, overlay=overlay, window=self.window)
            self._plans[key] = plan
        return plan

    def process(self, fields: Mapping, schema_types: Mapping[str, str],
                rules: Sequence[ValidationRule], domain: str | None = None,
                history: Mapping[str, Sequence] | None = None,
                uniqueness: Callable[[str, object], bool] | None = None,
                ) -> tuple[CleanOutcome, VerifyReport]:
        """validate -> clean -> verify for one record."""
        if domain is None:
            domain = self.identify(fields)
        plan = self.plan_for(rules, domain)
        violations = validate(fields, plan, uniqueness=uniqueness)
        outcome = clean(fields, violations, plan, history=history,
                        uniqueness=uniqueness)
        if not outcome.kept:
            return outcome, VerifyReport(False, [])
        report = verify(outcome, plan, schema_types, uniqueness=uniqueness)
        return outcome, report
