"""Policy tree loading, parameter propagation, execution, and ranking."""
from __future__ import annotations

import json
from pathlib import Path

import pytest

from policylab.errors import (
    CriterionParseError,
    IdError,
    InfeasibleDegree,
    InvalidParam,
    MissingRequired,
    StructureError,
)
from policylab.jsonutil import canonical_bytes
from policylab.metasim import (
    execute,
    load_tree,
    propagate,
    rank,
    resolve_all,
    validate_tree,
)
from policylab.rng import mix

POLICY_DIR = Path(__file__).resolve().parent.parent / "config" / "policies"

RAD_POPULATION = {
    "method": "random",
    "min_degree": 1,
    "max_degree": 4,
    "node_attrs": {"radicalization_status": {"dist": "uniform",
                                             "low": -1, "high": 1}},
    "edge_attrs": {"contact_strength": {"dist": "uniform",
                                        "low": -0.25, "high": 1}},
}


def step_doc(step_id, params=None):
    return {"id": step_id, "kind": "step", "title": f"step {step_id}",
            "model": "rad", "params": params or {}}


def tree_doc(criteria=("avg(radicals) <= cap",), objective_params=None,
             doc_params=None):
    objective_params = objective_params or [{"cap": 1}, {"cap": -1}]
    params = {"rounds": 2, "population_sizes": 30, "cycles": 2,
              "population_model": RAD_POPULATION}
    params.update(doc_params or {})
    return {
        "params": params,
        "nodes": [{
            "id": "0", "kind": "goal", "title": "goal zero",
            "criteria": list(criteria),
            "children": [
                {"id": f"0-{i}", "kind": "objective", "title": f"option {i}",
                 "params": obj_params,
                 "children": [step_doc(f"0-{i}-0")]}
                for i, obj_params in enumerate(objective_params)
            ],
        }],
    }


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def test_load_tree_builds_nested_nodes():
    tree = load_tree(tree_doc())
    ids = [(n.node_id, n.kind) for n in tree.walk()]
    assert ids == [("0", "goal"), ("0-0", "objective"), ("0-0-0", "step"),
                   ("0-1", "objective"), ("0-1-0", "step")]
    goal = tree.roots[0]
    assert goal.title == "goal zero"
    assert goal.criteria == ["avg(radicals) <= cap"]
    assert len(goal.parsed_criteria) == 1
    assert tree.roots[0].children[0].children[0].model == "rad"


def test_load_tree_accepts_json_text():
    tree = load_tree(json.dumps(tree_doc()))
    assert tree.roots[0].node_id == "0"


def test_load_tree_rejects_bad_json_text():
    with pytest.raises(StructureError, match="invalid JSON"):
        load_tree("{nope")


@pytest.mark.parametrize("mangle,error", [
    (lambda d: [], StructureError),
    (lambda d: {"params": {}}, StructureError),
    (lambda d: {"nodes": []}, StructureError),
    (lambda d: {"nodes": [1]}, StructureError),
    (lambda d: {"params": ["rounds"], "nodes": d["nodes"]}, StructureError),
])
def test_load_tree_document_level_errors(mangle, error):
    with pytest.raises(error):
        load_tree(mangle(tree_doc()))


def test_root_must_be_a_goal():
    doc = tree_doc()
    doc["nodes"][0]["kind"] = "objective"
    with pytest.raises(StructureError, match="expected a goal"):
        load_tree(doc)


def test_unknown_kind_rejected():
    doc = tree_doc()
    doc["nodes"][0]["children"][0]["kind"] = "strategy"
    with pytest.raises(StructureError, match="unknown kind"):
        load_tree(doc)


def test_misnumbered_id_raises_id_error():
    doc = tree_doc()
    doc["nodes"][0]["children"][1]["id"] = "0-7"
    with pytest.raises(IdError, match="expected node id '0-1'"):
        load_tree(doc)


def test_root_ids_count_from_zero():
    doc = tree_doc()
    doc["nodes"][0]["id"] = "1"
    with pytest.raises(IdError, match="expected node id '0'"):
        load_tree(doc)


def test_criteria_only_on_goals():
    doc = tree_doc()
    doc["nodes"][0]["children"][0]["criteria"] = ["avg(radicals) < 1"]
    with pytest.raises(StructureError, match="criteria are only allowed on goals"):
        load_tree(doc)


def test_criteria_must_be_strings():
    doc = tree_doc(criteria=())
    doc["nodes"][0]["criteria"] = [42]
    with pytest.raises(StructureError):
        load_tree(doc)


def test_bad_criterion_reports_parse_offset():
    doc = tree_doc(criteria=("avg(radicals) <",))
    with pytest.raises(CriterionParseError) as err:
        load_tree(doc)
    assert err.value.offset == 14


def test_model_only_on_steps():
    doc = tree_doc()
    doc["nodes"][0]["model"] = "rad"
    with pytest.raises(StructureError, match="model is only allowed on steps"):
        load_tree(doc)


def test_step_model_must_be_known():
    doc = tree_doc()
    doc["nodes"][0]["children"][0]["children"][0]["model"] = "weather"
    with pytest.raises(StructureError, match="step model"):
        load_tree(doc)


def test_steps_cannot_have_children():
    doc = tree_doc()
    doc["nodes"][0]["children"][0]["children"][0]["children"] = [
        {"id": "0-0-0-0", "kind": "step", "model": "rad"}]
    with pytest.raises(StructureError, match="steps cannot have children"):
        load_tree(doc)


def test_params_must_be_an_object():
    doc = tree_doc()
    doc["nodes"][0]["params"] = ["rounds", 3]
    with pytest.raises(StructureError, match="params must be an object"):
        load_tree(doc)


# ---------------------------------------------------------------------------
# parameter propagation
# ---------------------------------------------------------------------------

def test_nearest_ancestor_wins():
    doc = tree_doc(doc_params={"cycles": 9})
    doc["nodes"][0]["params"] = {"cycles": 5}
    doc["nodes"][0]["children"][0]["children"][0]["params"] = {"cycles": 1}
    tree = load_tree(doc)
    resolved = resolve_all(tree)
    assert resolved["0-0-0"].values["cycles"] == 1
    assert resolved["0-1-0"].values["cycles"] == 5
    assert resolved["0"].values["cycles"] == 5


def test_provenance_tracks_supplying_node():
    doc = tree_doc()
    doc["nodes"][0]["children"][0]["children"][0]["params"] = {"cycles": 1}
    resolved = resolve_all(load_tree(doc))
    leaf = resolved["0-0-0"]
    assert leaf.provenance["cycles"] == "0-0-0"
    assert leaf.provenance["rounds"] == "policy"
    assert leaf.provenance["cap"] == "0-0"


def test_propagate_requires_leaf_essentials():
    doc = tree_doc()
    del doc["params"]["population_model"]
    del doc["params"]["rounds"]
    with pytest.raises(MissingRequired) as err:
        propagate(load_tree(doc))
    assert "population_model" in str(err.value)
    assert "rounds" in str(err.value)


@pytest.mark.parametrize("rounds", [0, -3, True, 2.5, "two"])
def test_rounds_must_be_a_positive_integer(rounds):
    doc = tree_doc(doc_params={"rounds": rounds})
    with pytest.raises(InvalidParam, match="rounds"):
        propagate(load_tree(doc))


def test_population_sizes_scalar_replicates_per_round():
    doc = tree_doc(doc_params={"rounds": 3, "population_sizes": 40})
    result = execute(load_tree(doc), seed=1)
    rounds = result["goals"][0]["objectives"][0]["steps"][0]["rounds"]
    assert [r["population_size"] for r in rounds] == [40, 40, 40]


def test_population_sizes_list_must_match_rounds():
    doc = tree_doc(doc_params={"rounds": 3, "population_sizes": [40, 50]})
    with pytest.raises(InvalidParam, match="population_sizes"):
        propagate(load_tree(doc))


@pytest.mark.parametrize("sizes", [[40, 0, 50], [40, True, 50], "many"])
def test_population_sizes_entries_must_be_positive_integers(sizes):
    doc = tree_doc(doc_params={"rounds": 3, "population_sizes": sizes})
    with pytest.raises(InvalidParam):
        propagate(load_tree(doc))


def test_per_round_population_sizes_are_used_in_order():
    doc = tree_doc(doc_params={"rounds": 3, "population_sizes": [30, 60, 90]})
    result = execute(load_tree(doc), seed=1)
    rounds = result["goals"][0]["objectives"][0]["steps"][0]["rounds"]
    assert [r["population_size"] for r in rounds] == [30, 60, 90]


# ---------------------------------------------------------------------------
# submit-time validation
# ---------------------------------------------------------------------------

def test_validate_tree_accepts_sound_documents():
    validate_tree(load_tree(tree_doc()))


def test_validate_tree_rejects_bad_cycles():
    doc = tree_doc(doc_params={"cycles": -1})
    with pytest.raises(InvalidParam, match="cycles"):
        validate_tree(load_tree(doc))


def test_validate_tree_rejects_infeasible_degree():
    doc = tree_doc(doc_params={"population_sizes": 4})
    with pytest.raises(InfeasibleDegree):
        validate_tree(load_tree(doc))


def test_validate_tree_checks_model_parameters():
    doc = tree_doc()
    doc["nodes"][0]["children"][0]["children"][0]["model"] = "wine"
    with pytest.raises(InvalidParam, match="wine model needs"):
        validate_tree(load_tree(doc))


def test_validate_tree_rejects_bad_threshold():
    doc = tree_doc(doc_params={"radical_threshold": 3.0})
    with pytest.raises(InvalidParam, match="radical_threshold"):
        validate_tree(load_tree(doc))


# ---------------------------------------------------------------------------
# execution and ranking
# ---------------------------------------------------------------------------

def test_execute_is_deterministic_and_thread_invariant():
    tree = load_tree(tree_doc())
    first = execute(tree, seed=42)
    second = execute(tree, seed=42)
    threaded = execute(tree, seed=42, max_workers=4)
    assert canonical_bytes(first) == canonical_bytes(second)
    assert canonical_bytes(first) == canonical_bytes(threaded)
    assert canonical_bytes(first) != canonical_bytes(execute(tree, seed=43))


def test_round_seeds_are_keyed_by_step_and_round():
    result = execute(load_tree(tree_doc()), seed=42)
    step = result["goals"][0]["objectives"][0]["steps"][0]
    assert [r["seed"] for r in step["rounds"]] == [
        mix(42, "0-0-0", 0), mix(42, "0-0-0", 1)]
    other = result["goals"][0]["objectives"][1]["steps"][0]
    assert other["rounds"][0]["seed"] == mix(42, "0-1-0", 0)


def test_round_trace_covers_every_cycle():
    result = execute(load_tree(tree_doc(doc_params={"cycles": 4})), seed=1)
    round_doc = result["goals"][0]["objectives"][0]["steps"][0]["rounds"][0]
    assert [t["index"] for t in round_doc["trace"]] == [0, 1, 2, 3, 4]
    assert round_doc["attributes"] == round_doc["trace"][-1]["attributes"]


def test_aggregates_pool_rounds_with_avg_min_max():
    result = execute(load_tree(tree_doc()), seed=42)
    objective = result["goals"][0]["objectives"][0]
    rounds = objective["steps"][0]["rounds"]
    for name, agg in objective["aggregates"].items():
        values = [r["attributes"][name] for r in rounds]
        assert agg["min"] == min(values)
        assert agg["max"] == max(values)
        expected_avg = sum(values) / len(values)
        expected_avg = min(max(expected_avg, agg["min"]), agg["max"])
        assert agg["avg"] == expected_avg


def test_criteria_see_objective_parameters():
    # cap=1 always beats the share (<= 1), cap=-1 never does
    result = execute(load_tree(tree_doc()), seed=42)
    goal = result["goals"][0]
    assert goal["ranking"] == {"0-0": 1.0, "0-1": 0.0}
    assert goal["no_criteria"] is False
    first, second = goal["objectives"]
    assert first["criteria"] == [{"text": "avg(radicals) <= cap",
                                  "satisfied": True}]
    assert (first["satisfied"], first["total"], first["proportion"]) == (1, 1, 1.0)
    assert (second["satisfied"], second["total"], second["proportion"]) == (0, 1, 0.0)


def test_half_satisfied_objective_ranks_at_one_half():
    criteria = ("avg(radicals) <= cap", "avg(radicals) >= 0")
    result = execute(load_tree(tree_doc(criteria=criteria)), seed=42)
    assert result["goals"][0]["ranking"] == {"0-0": 1.0, "0-1": 0.5}


def test_goal_without_criteria_is_flagged():
    result = execute(load_tree(tree_doc(criteria=())), seed=42)
    goal = result["goals"][0]
    assert goal["no_criteria"] is True
    assert goal["ranking"] == {"0-0": 0.0, "0-1": 0.0}


def test_rank_contract():
    assert rank({"a": [True, False], "b": [True, True]}, 2) == \
        ({"a": 0.5, "b": 1.0}, False)
    assert rank({"a": []}, 0) == ({"a": 0.0}, True)


def test_results_document_shape():
    result = execute(load_tree(tree_doc()), seed=5)
    assert set(result) == {"seed", "goals"}
    goal = result["goals"][0]
    assert set(goal) == {"id", "title", "criteria", "ranking", "no_criteria",
                         "objectives"}
    objective = goal["objectives"][0]
    assert set(objective) == {"id", "title", "aggregates", "criteria",
                              "satisfied", "total", "proportion", "steps"}
    step = objective["steps"][0]
    assert set(step) == {"id", "title", "model", "rounds"}
    assert set(step["rounds"][0]) == {"round", "population_size", "seed",
                                      "attributes", "trace"}


def test_objective_pools_rounds_across_multiple_steps():
    doc = tree_doc()
    doc["nodes"][0]["children"][0]["children"].append(step_doc("0-0-1"))
    result = execute(load_tree(doc), seed=42)
    objective = result["goals"][0]["objectives"][0]
    assert [s["id"] for s in objective["steps"]] == ["0-0-0", "0-0-1"]
    pooled = [r["attributes"]["radicals"]
              for s in objective["steps"] for r in s["rounds"]]
    assert len(pooled) == 4
    assert objective["aggregates"]["radicals"]["min"] == min(pooled)
    assert objective["aggregates"]["radicals"]["max"] == max(pooled)


# ---------------------------------------------------------------------------
# bundled policy documents
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["radicalization.json", "wine_pricing.json"])
def test_bundled_policy_documents_validate(name):
    tree = load_tree((POLICY_DIR / name).read_text())
    validate_tree(tree)
    goal = tree.roots[0]
    assert goal.criteria, "bundled examples should demonstrate ranking"
    assert all(obj.children for obj in goal.children)
