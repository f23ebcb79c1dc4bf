"""Attribute-based access control.

Rules pair an action pattern with attribute conditions on the subject and on
the resource. Evaluation is a pure function over (subject, action, resource,
policy set): any matching deny wins, otherwise the first matching permit wins,
otherwise the decision is Deny. An empty policy set therefore denies
everything.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import MalformedRule, PolicyParseError

OPERATORS = ("eq", "neq", "in")
EFFECTS = ("permit", "deny")

PERMIT = "Permit"
DENY = "Deny"


@dataclass(frozen=True)
class SubjectAttrs:
    """An authenticated caller: opaque id plus free-form string attributes."""

    subject_id: str
    attributes: Mapping[str, str] = field(default_factory=dict)

    def lookup(self, attr: str) -> str | None:
        if attr == "subject_id":
            return self.subject_id
        return self.attributes.get(attr)


@dataclass(frozen=True)
class Condition:
    attr: str
    op: str
    value: str | tuple[str, ...]

    def holds(self, lookup) -> bool:
        if self.op not in OPERATORS:
            raise MalformedRule(f"unknown operator {self.op!r}")
        observed = lookup(self.attr)
        if observed is None:
            # Absent attributes never satisfy a condition, whatever the op.
            return False
        if self.op == "eq":
            return observed == self.value
        if self.op == "neq":
            return observed != self.value
        return observed in self.value


@dataclass(frozen=True)
class AbacRule:
    rule_id: str
    effect: str
    action: str
    subject: tuple[Condition, ...] = ()
    resource: tuple[Condition, ...] = ()

    def matches(self, subject: SubjectAttrs, action: str,
                resource_attrs: Mapping[str, str]) -> bool:
        if self.action != "*" and self.action != action:
            return False
        if not all(cond.holds(subject.lookup) for cond in self.subject):
            return False
        return all(cond.holds(resource_attrs.get) for cond in self.resource)


@dataclass(frozen=True)
class Decision:
    outcome: str
    matched_rule: str | None = None

    @property
    def permitted(self) -> bool:
        return self.outcome == PERMIT


def evaluate(subject: SubjectAttrs, action: str,
             resource_attrs: Mapping[str, str] | None,
             policy_set: Sequence[AbacRule]) -> Decision:
    """Deny-overrides, then first-applicable among permits, else default deny."""
    resource_attrs = resource_attrs or {}
    first_permit: AbacRule | None = None
    for rule in policy_set:
        if not rule.matches(subject, action, resource_attrs):
            continue
        if rule.effect == "deny":
            return Decision(DENY, rule.rule_id)
        if first_permit is None:
            first_permit = rule
    if first_permit is not None:
        return Decision(PERMIT, first_permit.rule_id)
    return Decision(DENY, None)


# ---------------------------------------------------------------------------
# policy documents
# ---------------------------------------------------------------------------

def _parse_condition(obj, path: str) -> Condition:
    if not isinstance(obj, dict):
        raise PolicyParseError("condition must be an object", field=path)
    attr = obj.get("attr")
    op = obj.get("op")
    value = obj.get("value")
    if not isinstance(attr, str) or not attr:
        raise PolicyParseError("condition attr must be a non-empty string",
                               field=f"{path}.attr")
    if op not in OPERATORS:
        raise PolicyParseError(f"unknown operator {op!r}", field=f"{path}.op")
    if op == "in":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise PolicyParseError("'in' needs a list of strings",
                                   field=f"{path}.value")
        value = tuple(value)
    elif not isinstance(value, str):
        raise PolicyParseError("condition value must be a string",
                               field=f"{path}.value")
    return Condition(attr, op, value)


def _parse_rule(obj, index: int) -> AbacRule:
    path = f"rules[{index}]"
    if not isinstance(obj, dict):
        raise PolicyParseError("rule must be an object", field=path)
    effect = obj.get("effect")
    if effect not in EFFECTS:
        raise PolicyParseError(f"effect must be one of {EFFECTS}",
                               field=f"{path}.effect")
    action = obj.get("action")
    if not isinstance(action, str) or not action:
        raise PolicyParseError("action must be a non-empty string",
                               field=f"{path}.action")
    subject = tuple(
        _parse_condition(c, f"{path}.subject[{i}]")
        for i, c in enumerate(obj.get("subject") or [])
    )
    resource = tuple(
        _parse_condition(c, f"{path}.resource[{i}]")
        for i, c in enumerate(obj.get("resource") or [])
    )
    if action == "*" and not subject and not resource:
        # A bare match-everything rule is almost always a policy bug; the
        # default-deny baseline already covers "deny all".
        raise PolicyParseError("rule matches everything; add a condition or "
                               "a concrete action", field=path)
    rule_id = obj.get("id") or f"rule-{index}"
    if not isinstance(rule_id, str):
        raise PolicyParseError("id must be a string", field=f"{path}.id")
    return AbacRule(rule_id, effect, action, subject, resource)


def load_policy_set(text: str) -> list[AbacRule]:
    """Parse a policy document; rule order is preserved.

    An empty document yields the empty policy set (deny everything).
    """
    if not text.strip():
        return []
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PolicyParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(doc, list):
        raise PolicyParseError("policy document must be an array of rules",
                               field="rules")
    return [_parse_rule(item, i) for i, item in enumerate(doc)]


def load_policy_file(path) -> list[AbacRule]:
    with open(path, "r", encoding="utf-8") as fh:
        return load_policy_set(fh.read())
