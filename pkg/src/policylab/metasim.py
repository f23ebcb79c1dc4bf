"""Policy trees: goals, objectives, and simulation steps.

A policy document nests goals (with success criteria), objectives (the
alternatives under comparison), and steps (concrete simulation configurations
bound to a model). Parameters declared anywhere in the tree propagate to
descendants, nearest ancestor winning. Executing a tree runs every step for a
configured number of rounds, pools each objective's per-round outcomes into
avg/min/max aggregates, evaluates the goal's criteria against each objective,
and ranks objectives by the proportion of criteria they satisfy.

Node ids are dash-paths: child ``i`` of node ``p`` has id ``p-i``; roots are
``0``, ``1``, ...
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

from . import criteria as criteria_mod
from .errors import (IdError, InvalidParam, MissingRequired, StructureError)
from .models import MODEL_NAMES, build_ruleset
from .rng import mix
from .simengine import PopulationModel, run_simulation

KINDS = ("goal", "objective", "step")
POLICY_LEVEL = "policy"  # provenance marker for document-level params

REQUIRED_LEAF_PARAMS = ("population_model", "rounds", "population_sizes")


@dataclass
class PolicyNode:
    node_id: str
    kind: str
    title: str = ""
    params: dict = field(default_factory=dict)
    criteria: list[str] = field(default_factory=list)
    parsed_criteria: list = field(default_factory=list)
    model: str | None = None
    children: list["PolicyNode"] = field(default_factory=list)


@dataclass
class PolicyTree:
    params: dict = field(default_factory=dict)
    roots: list[PolicyNode] = field(default_factory=list)

    def walk(self):
        stack = list(reversed(self.roots))
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


@dataclass(frozen=True)
class ResolvedParams:
    """Effective parameters at a node plus, per key, the id of the node that
    supplied the value (an ancestor or the node itself; ``policy`` for the
    document level)."""

    values: Mapping[str, object]
    provenance: Mapping[str, str]


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

_CHILD_KIND = {"goal": "objective", "objective": "step"}


def _require_dict(value, what: str) -> dict:
    if not isinstance(value, dict):
        raise StructureError(f"{what} must be an object")
    return value


def _load_node(doc, expected_kind: str, expected_id: str) -> PolicyNode:
    doc = _require_dict(doc, "node")
    kind = doc.get("kind")
    if kind not in KINDS:
        raise StructureError(f"node {expected_id}: unknown kind {kind!r}")
    if kind != expected_kind:
        raise StructureError(
            f"node {expected_id}: expected a {expected_kind}, found {kind}")
    node_id = doc.get("id")
    if node_id != expected_id:
        raise IdError(f"expected node id {expected_id!r}, found {node_id!r}")

    params = doc.get("params") or {}
    if not isinstance(params, dict):
        raise StructureError(f"node {node_id}: params must be an object")

    raw_criteria = doc.get("criteria") or []
    if raw_criteria and kind != "goal":
        raise StructureError(f"node {node_id}: criteria are only allowed on goals")
    if not isinstance(raw_criteria, list) or not all(isinstance(c, str) for c in raw_criteria):
        raise StructureError(f"node {node_id}: criteria must be a list of strings")
    parsed = [criteria_mod.parse_criterion(text) for text in raw_criteria]

    model = doc.get("model")
    if model is not None and kind != "step":
        raise StructureError(f"node {node_id}: model is only allowed on steps")
    if kind == "step":
        if model not in MODEL_NAMES:
            raise StructureError(
                f"node {node_id}: step model must be one of {MODEL_NAMES}, "
                f"found {model!r}")
        if doc.get("children"):
            raise StructureError(f"node {node_id}: steps cannot have children")

    node = PolicyNode(node_id=node_id, kind=kind, title=str(doc.get("title", "")),
                      params=dict(params), criteria=list(raw_criteria),
                      parsed_criteria=parsed, model=model)
    child_kind = _CHILD_KIND.get(kind)
    for i, child_doc in enumerate(doc.get("children") or []):
        node.children.append(_load_node(child_doc, child_kind, f"{node_id}-{i}"))
    return node


def load_tree(doc: dict | str) -> PolicyTree:
    """Validate and load a policy document.

    Structural problems raise :class:`StructureError`, misnumbered ids raise
    :class:`IdError`, and bad criteria raise :class:`CriterionParseError`
    with the offset of the offending token.
    """
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise StructureError(f"invalid JSON: {exc.msg} (line {exc.lineno})")
    doc = _require_dict(doc, "policy document")
    params = doc.get("params") or {}
    if not isinstance(params, dict):
        raise StructureError("document params must be an object")
    nodes = doc.get("nodes")
    if not isinstance(nodes, list) or not nodes:
        raise StructureError("policy document needs a non-empty 'nodes' list")
    roots = [_load_node(node_doc, "goal", str(i)) for i, node_doc in enumerate(nodes)]
    return PolicyTree(params=dict(params), roots=roots)


# ---------------------------------------------------------------------------
# parameter propagation
# ---------------------------------------------------------------------------

def resolve_all(tree: PolicyTree) -> dict[str, ResolvedParams]:
    """Effective parameters for every node, nearest ancestor winning."""
    resolved: dict[str, ResolvedParams] = {}

    def descend(node: PolicyNode, values: dict, provenance: dict) -> None:
        values = dict(values)
        provenance = dict(provenance)
        for key, value in node.params.items():
            values[key] = value
            provenance[key] = node.node_id
        resolved[node.node_id] = ResolvedParams(values, provenance)
        for child in node.children:
            descend(child, values, provenance)

    base_prov = {key: POLICY_LEVEL for key in tree.params}
    for root in tree.roots:
        descend(root, tree.params, base_prov)
    return resolved


def _check_rounds(node_id: str, values: Mapping) -> tuple[int, list[int]]:
    rounds = values["rounds"]
    if isinstance(rounds, bool) or not isinstance(rounds, int) or rounds < 1:
        raise InvalidParam(f"step {node_id}: rounds must be a positive integer")
    sizes = values["population_sizes"]
    if isinstance(sizes, int) and not isinstance(sizes, bool):
        sizes = [sizes] * rounds
    if (not isinstance(sizes, list) or len(sizes) != rounds
            or not all(isinstance(s, int) and not isinstance(s, bool) and s > 0
                       for s in sizes)):
        raise InvalidParam(
            f"step {node_id}: population_sizes must be a positive integer or "
            f"a list of {rounds} positive integers")
    return rounds, list(sizes)


def propagate(tree: PolicyTree) -> dict[str, ResolvedParams]:
    """Resolved parameters for every step, after checking required keys."""
    resolved = resolve_all(tree)
    leaves: dict[str, ResolvedParams] = {}
    for node in tree.walk():
        if node.kind != "step":
            continue
        params = resolved[node.node_id]
        missing = [key for key in REQUIRED_LEAF_PARAMS if key not in params.values]
        if missing:
            raise MissingRequired(
                f"step {node.node_id} is missing required parameters: "
                f"{', '.join(missing)}")
        _check_rounds(node.node_id, params.values)
        leaves[node.node_id] = params
    return leaves


def validate_tree(tree: PolicyTree) -> None:
    """Everything execute() will need must already parse at submit time."""
    leaves = propagate(tree)
    for node in tree.walk():
        if node.kind != "step":
            continue
        values = leaves[node.node_id].values
        _rounds, sizes = _check_rounds(node.node_id, values)
        cycles = values.get("cycles", 1)
        if isinstance(cycles, bool) or not isinstance(cycles, int) or cycles < 0:
            raise InvalidParam(f"step {node.node_id}: cycles must be an "
                               f"integer >= 0")
        for size in sorted(set(sizes)):
            PopulationModel.from_doc(values["population_model"], size=size)
        build_ruleset(node.model, values, cycles)


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

def _run_round(step: PolicyNode, resolved: ResolvedParams, seed: int,
               round_index: int, population_size: int) -> dict:
    values = resolved.values
    sub_seed = mix(seed, step.node_id, round_index)
    model = PopulationModel.from_doc(values["population_model"],
                                     size=population_size)
    cycles = values.get("cycles", 1)
    if isinstance(cycles, bool) or not isinstance(cycles, int) or cycles < 0:
        raise InvalidParam(f"step {step.node_id}: cycles must be an integer >= 0")
    ruleset, cycles = build_ruleset(step.model, values, cycles)
    trace = run_simulation(model, ruleset, cycles, sub_seed)
    return {
        "round": round_index,
        "population_size": population_size,
        "seed": sub_seed,
        "attributes": trace.entries[-1],
        "trace": [{"index": i, "attributes": entry}
                  for i, entry in enumerate(trace.entries)],
    }


def _aggregate(rounds: list[dict]) -> dict[str, dict[str, float]]:
    names: list[str] = []
    for round_doc in rounds:
        for name in round_doc["attributes"]:
            if name not in names:
                names.append(name)
    aggregates: dict[str, dict[str, float]] = {}
    for name in names:
        values = [r["attributes"][name] for r in rounds if name in r["attributes"]]
        low = min(values)
        high = max(values)
        avg = sum(values) / len(values)
        avg = min(max(avg, low), high)
        aggregates[name] = {"avg": avg, "min": low, "max": high}
    return aggregates


def rank(verdicts: Mapping[str, list[bool]],
         criteria_count: int) -> tuple[dict[str, float], bool]:
    """Proportion of satisfied criteria per objective.

    With zero criteria every proportion is defined as 0 and the ranking is
    flagged so callers can tell "no evidence" from "all criteria failed".
    """
    if criteria_count == 0:
        return {obj_id: 0.0 for obj_id in verdicts}, True
    ranking = {obj_id: sum(1 for v in flags if v) / criteria_count
               for obj_id, flags in verdicts.items()}
    return ranking, False


def execute(tree: PolicyTree, seed: int, max_workers: int = 1) -> dict:
    """Run every step of the tree and build the results document.

    The document is a pure function of (tree, seed): round sub-seeds are
    derived from the seed, the step id, and the round index, so results are
    identical regardless of worker count.
    """
    resolved = resolve_all(tree)
    propagate(tree)  # surfaces MissingRequired / InvalidParam before any work

    jobs: list[tuple[PolicyNode, ResolvedParams, int, int]] = []
    for node in tree.walk():
        if node.kind != "step":
            continue
        params = resolved[node.node_id]
        rounds, sizes = _check_rounds(node.node_id, params.values)
        for r in range(rounds):
            jobs.append((node, params, r, sizes[r]))

    if max_workers is not None and max_workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            round_docs = list(pool.map(
                lambda job: _run_round(job[0], job[1], seed, job[2], job[3]), jobs))
    else:
        round_docs = [_run_round(node, params, seed, r, size)
                      for node, params, r, size in jobs]

    by_step: dict[str, list[dict]] = {}
    for (node, _params, _r, _size), doc in zip(jobs, round_docs):
        by_step.setdefault(node.node_id, []).append(doc)

    goals = []
    for goal in tree.roots:
        objective_docs = []
        verdicts: dict[str, list[bool]] = {}
        for objective in goal.children:
            step_docs = []
            pooled_rounds: list[dict] = []
            for step in objective.children:
                rounds = by_step.get(step.node_id, [])
                pooled_rounds.extend(rounds)
                step_docs.append({
                    "id": step.node_id,
                    "title": step.title,
                    "model": step.model,
                    "rounds": rounds,
                })
            aggregates = _aggregate(pooled_rounds)
            objective_params = resolved[objective.node_id].values
            criterion_docs = []
            flags = []
            for text, parsed in zip(goal.criteria, goal.parsed_criteria):
                satisfied = criteria_mod.evaluate_criterion(
                    parsed, aggregates, objective_params)
                criterion_docs.append({"text": text, "satisfied": satisfied})
                flags.append(satisfied)
            verdicts[objective.node_id] = flags
            total = len(goal.criteria)
            satisfied_count = sum(1 for f in flags if f)
            objective_docs.append({
                "id": objective.node_id,
                "title": objective.title,
                "aggregates": aggregates,
                "criteria": criterion_docs,
                "satisfied": satisfied_count,
                "total": total,
                "proportion": (satisfied_count / total) if total else 0.0,
                "steps": step_docs,
            })
        ranking, no_criteria = rank(verdicts, len(goal.criteria))
        goals.append({
            "id": goal.node_id,
            "title": goal.title,
            "criteria": list(goal.criteria),
            "ranking": ranking,
            "no_criteria": no_criteria,
            "objectives": objective_docs,
        })
    return {"seed": seed, "goals": goals}


# Re-exported here because criteria are part of the policy-tree surface.
parse_criterion = criteria_mod.parse_criterion
print_criterion = criteria_mod.print_criterion
evaluate_criterion = criteria_mod.evaluate_criterion
