"""Ingest chains, record storage, analytics, and subject rights."""
from __future__ import annotations

import json
from datetime import datetime, timedelta, timezone

import pytest

from policylab.cleaning import CleaningEngine, DomainLexicon, ValidationRule
from policylab.errors import (
    FunctionFailure,
    NotFound,
    SourceParseError,
    UnknownFunction,
    ValidationFailure,
    WrongSourceKind,
)
from policylab.pipeline import (
    BUILTIN_ANALYTIC,
    BUILTIN_INGEST,
    Pipeline,
    Record,
    parse_sentiment_lexicon,
    score_text,
)
from policylab.registry import Registry

from conftest import SENTIMENT_TSV, compliance_doc

BUILTINS = {"ingest": BUILTIN_INGEST, "analytic": BUILTIN_ANALYTIC}

SCHEMA = [
    {"name": "author", "value_type": "text",
     "identifier_class": "direct_identifier"},
    {"name": "note", "value_type": "text"},
    {"name": "rating", "value_type": "integer"},
]


class StepClock:
    """Settable clock so ingest_time and retention math are exact."""

    def __init__(self, start: str = "2024-05-01T12:00:00+00:00"):
        self.moment = datetime.fromisoformat(start).astimezone(timezone.utc)

    def __call__(self) -> datetime:
        return self.moment

    def advance(self, days: float = 0, seconds: float = 0) -> None:
        self.moment += timedelta(days=days, seconds=seconds)


def allow(subject, action, resource):
    return None


def make_env(tmp_path, clock=None, lexicons=None, rule_packs=None):
    clock = clock or StepClock()
    registry = Registry(tmp_path / "state", allow, BUILTINS, clock=clock)
    cleaning = CleaningEngine(lexicons=lexicons, rule_packs=rule_packs)
    pipeline = Pipeline(registry, tmp_path / "state", cleaning,
                        parse_sentiment_lexicon(SENTIMENT_TSV), clock=clock)
    registry.param_validator = pipeline.validate_params
    registry.on_dataset_deleted = pipeline.drop_dataset
    return registry, pipeline


def add_function(registry, name, builtin_ref, params=None, kind="ingest"):
    return registry.register_function(
        {"name": name, "kind": kind, "builtin_ref": builtin_ref,
         "params": params or {}, "owner": "ada",
         "compliance": compliance_doc()}, "ada")


def add_dataset(registry, name="notes", chain=(), source_kind="stream",
                schema=SCHEMA, retention_days=None, domain_hint=None):
    return registry.register_dataset(
        {"name": name, "source_kind": source_kind, "schema": list(schema),
         "ingest_chain": list(chain), "retention_days": retention_days,
         "domain_hint": domain_hint, "owner": "ada",
         "compliance": compliance_doc()}, "ada")


def ndjson(*docs) -> str:
    return "\n".join(json.dumps(doc) for doc in docs)


# ---------------------------------------------------------------------------
# sentiment scoring
# ---------------------------------------------------------------------------

def test_lexicon_parses_scores_comments_and_negators():
    lex = parse_sentiment_lexicon(
        "# plain comment\n#negator not\n\nGood\t0.7\nbad\t-0.6\n")
    assert lex.scores == {"good": 0.7, "bad": -0.6}
    assert lex.negators == frozenset({"not"})


@pytest.fixture(scope="module")
def lexicon():
    return parse_sentiment_lexicon(SENTIMENT_TSV)


def test_score_is_mean_of_lexicon_hits(lexicon):
    assert score_text("good", lexicon) == 0.7
    assert score_text("good but bad", lexicon) == pytest.approx((0.7 - 0.6) / 2)
    assert score_text("entirely unknown words", lexicon) == 0.0
    assert score_text("", lexicon) == 0.0


def test_score_is_case_and_punctuation_insensitive(lexicon):
    assert score_text("GOOD!!!", lexicon) == 0.7


def test_negator_flips_next_hit_within_three_tokens(lexicon):
    assert score_text("not good", lexicon) == -0.7
    assert score_text("not very good", lexicon) == -0.7
    assert score_text("not really very good", lexicon) == -0.7
    # four tokens away is out of the window; the negator is still consumed
    assert score_text("not really very truly good", lexicon) == 0.7


def test_stacked_negators_cancel_pairwise(lexicon):
    assert score_text("not no good", lexicon) == 0.7
    assert score_text("never not no good", lexicon) == -0.7


def test_negators_are_consumed_by_the_first_hit(lexicon):
    assert score_text("not good but good", lexicon) == pytest.approx(0.0)


def test_score_clamped_to_unit_interval():
    lex = parse_sentiment_lexicon("stellar\t2.5\ndire\t-3.0\n")
    assert score_text("stellar", lex) == 1.0
    assert score_text("dire", lex) == -1.0


def test_record_doc_round_trip():
    record = Record(fields={"a": 1}, record_id=7,
                    ingest_time="2024-05-01T12:00:00+00:00",
                    annotations={"tone": 0.5})
    assert Record.from_doc(record.to_doc()) == record
    bare = Record.from_doc({"record_id": 1, "ingest_time": "", "fields": {}})
    assert bare.annotations == {}


# ---------------------------------------------------------------------------
# builtin parameter validation
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("builtin_ref,params", [
    ("minimize", {}),
    ("minimize", {"drop_fields": ["a", "b"], "drop_identifiers": True}),
    ("clean", {}),
    ("clean", {"rules": [{"field": "x", "constraint": "required"}],
               "domain": "winery"}),
    ("sentiment", {"field": "note"}),
    ("sentiment_summary", {}),
    ("sentiment_summary", {"annotation": "tone"}),
])
def test_valid_builtin_params(tmp_path, builtin_ref, params):
    _, pipeline = make_env(tmp_path)
    pipeline.validate_params(builtin_ref, params)


@pytest.mark.parametrize("builtin_ref,params,field", [
    ("minimize", {"drop_fields": "a"}, "params.drop_fields"),
    ("minimize", {"drop_fields": [1]}, "params.drop_fields"),
    ("minimize", {"drop_identifiers": "yes"}, "params.drop_identifiers"),
    ("clean", {"domain": 7}, "params.domain"),
    ("sentiment", {}, "params.field"),
    ("sentiment", {"field": ""}, "params.field"),
    ("sentiment", {"field": 3}, "params.field"),
    ("sentiment_summary", {"annotation": 1}, "params.annotation"),
])
def test_invalid_builtin_params(tmp_path, builtin_ref, params, field):
    _, pipeline = make_env(tmp_path)
    with pytest.raises(ValidationFailure) as err:
        pipeline.validate_params(builtin_ref, params)
    assert err.value.field == field


def test_registration_rejects_bad_builtin_params(tmp_path):
    registry, _ = make_env(tmp_path)
    with pytest.raises(ValidationFailure):
        add_function(registry, "tone", "sentiment", params={})


# ---------------------------------------------------------------------------
# batch ingest
# ---------------------------------------------------------------------------

def test_ingest_stores_records_with_ids_and_timestamps(tmp_path):
    registry, pipeline = make_env(tmp_path)
    dataset = add_dataset(registry)
    report = pipeline.ingest_at_rest(dataset, ndjson(
        {"author": "ann", "note": "good"},
        {"author": "bob", "note": "bad"},
        {"author": "cam", "rating": 4},
    ))
    assert report.to_doc() == {"records_in": 3, "records_stored": 3,
                               "records_dropped": 0, "records_failed": 0,
                               "dropped_by": {}}
    store = pipeline.store_for(dataset)
    assert [r.record_id for r in store.records] == [1, 2, 3]
    assert all(r.ingest_time == "2024-05-01T12:00:00+00:00"
               for r in store.records)


def test_ingest_accepts_bytes_and_skips_blank_lines(tmp_path):
    registry, pipeline = make_env(tmp_path)
    dataset = add_dataset(registry)
    payload = b'{"author": "ann"}\n\n   \n{"author": "bob"}\n'
    assert pipeline.ingest_at_rest(dataset, payload).records_stored == 2


def test_malformed_line_rejects_the_whole_batch(tmp_path):
    registry, pipeline = make_env(tmp_path)
    dataset = add_dataset(registry)
    payload = '{"author": "ann"}\n{broken\n{"author": "bob"}'
    with pytest.raises(SourceParseError) as err:
        pipeline.ingest_at_rest(dataset, payload)
    assert err.value.to_doc()["line"] == 2
    assert pipeline.store_for(dataset).records == []


def test_non_object_line_rejects_the_batch(tmp_path):
    registry, pipeline = make_env(tmp_path)
    dataset = add_dataset(registry)
    with pytest.raises(SourceParseError) as err:
        pipeline.ingest_at_rest(dataset, '{"author": "ann"}\n[1, 2]')
    assert err.value.to_doc()["line"] == 2


def test_unknown_dataset_raises_not_found(tmp_path):
    _, pipeline = make_env(tmp_path)
    with pytest.raises(NotFound):
        pipeline.ingest_at_rest("ds-9999", "{}")


def test_unknown_fields_go_to_the_dead_letter_file(tmp_path):
    registry, pipeline = make_env(tmp_path)
    dataset = add_dataset(registry)
    report = pipeline.ingest_at_rest(dataset, ndjson(
        {"author": "ann"},
        {"author": "bob", "shoe_size": 44},
    ))
    assert (report.records_stored, report.records_failed) == (1, 1)
    letters = pipeline.dead_letters(dataset)
    assert len(letters) == 1
    assert letters[0]["reason"] == "unknown field 'shoe_size'"
    assert letters[0]["function"] is None
    assert letters[0]["record"] == {"author": "bob", "shoe_size": 44}
    assert letters[0]["time"] == "2024-05-01T12:00:00+00:00"


def test_non_scalar_values_are_rejected_up_front(tmp_path):
    registry, pipeline = make_env(tmp_path)
    dataset = add_dataset(registry)
    report = pipeline.ingest_at_rest(dataset, ndjson(
        {"author": "ann", "note": ["a", "b"]}))
    assert report.records_failed == 1
    assert "must be a scalar" in pipeline.dead_letters(dataset)[0]["reason"]


# ---------------------------------------------------------------------------
# chain builtins
# ---------------------------------------------------------------------------

def test_minimize_drops_listed_fields_and_identifiers(tmp_path):
    registry, pipeline = make_env(tmp_path)
    fn = add_function(registry, "scrub", "minimize",
                      {"drop_fields": ["rating"], "drop_identifiers": True})
    dataset = add_dataset(registry, chain=[fn])
    pipeline.ingest_at_rest(dataset, ndjson(
        {"author": "ann", "note": "good", "rating": 5}))
    record = pipeline.store_for(dataset).records[0]
    assert record.fields == {"note": "good"}


def test_clean_repairs_schema_rule_violations(tmp_path):
    registry, pipeline = make_env(tmp_path)
    fn = add_function(registry, "tidy", "clean")
    schema = [dict(SCHEMA[0]), dict(SCHEMA[1]),
              {"name": "rating", "value_type": "integer",
               "rules": [{"constraint": "range", "min": 0, "max": 5,
                          "action": "replace", "default": 3}]}]
    dataset = add_dataset(registry, chain=[fn], schema=schema)
    report = pipeline.ingest_at_rest(dataset, ndjson(
        {"author": "ann", "rating": 99},
        {"author": "bob", "rating": 4},
    ))
    assert report.records_stored == 2
    ratings = [r.fields["rating"] for r in pipeline.store_for(dataset).records]
    assert ratings == [3, 4]


def test_clean_function_params_take_rules_too(tmp_path):
    registry, pipeline = make_env(tmp_path)
    fn = add_function(registry, "tidy", "clean", {"rules": [
        {"field": "author", "constraint": "required"}]})
    dataset = add_dataset(registry, chain=[fn])
    report = pipeline.ingest_at_rest(dataset, ndjson(
        {"note": "anonymous tip"}, {"author": "ann"}))
    assert (report.records_stored, report.records_dropped) == (1, 1)
    assert report.dropped_by == {"tidy": 1}


def test_clean_uses_domain_overlay_from_hint(tmp_path):
    packs = {"winery": [ValidationRule.from_doc(
        {"field": "rating", "constraint": "range", "min": 0, "max": 5,
         "action": "replace", "default": 5})]}
    registry, pipeline = make_env(tmp_path, rule_packs=packs)
    fn = add_function(registry, "tidy", "clean")
    dataset = add_dataset(registry, chain=[fn], domain_hint="winery")
    pipeline.ingest_at_rest(dataset, ndjson({"author": "ann", "rating": 12}))
    assert pipeline.store_for(dataset).records[0].fields["rating"] == 5


def test_clean_identifies_domain_from_text_when_unhinted(tmp_path):
    lexicons = {"winery": DomainLexicon("winery", frozenset(
        {"wine", "grape", "vintage", "cellar"}))}
    packs = {"winery": [ValidationRule.from_doc(
        {"field": "rating", "constraint": "range", "min": 0, "max": 5,
         "action": "replace", "default": 5})]}
    registry, pipeline = make_env(tmp_path, lexicons=lexicons, rule_packs=packs)
    fn = add_function(registry, "tidy", "clean")
    dataset = add_dataset(registry, chain=[fn])
    pipeline.ingest_at_rest(dataset, ndjson(
        {"author": "ann", "note": "a fine vintage from the cellar",
         "rating": 12},
        {"author": "bob", "note": "completely unrelated chatter",
         "rating": 12},
    ))
    ratings = [r.fields["rating"] for r in pipeline.store_for(dataset).records]
    assert ratings == [5, 12]  # overlay only where the text matched


def test_clean_repairs_type_errors_that_passed_the_precheck(tmp_path):
    # the schema pre-check is shape-only by design: a string where an
    # integer belongs reaches the cleaner, which can repair it
    registry, pipeline = make_env(tmp_path)
    fn = add_function(registry, "tidy", "clean", {"rules": [
        {"field": "rating", "constraint": "value_type", "type": "integer",
         "action": "replace", "default": 0}]})
    dataset = add_dataset(registry, chain=[fn])
    pipeline.ingest_at_rest(dataset, ndjson({"author": "a", "rating": "five"}))
    assert pipeline.store_for(dataset).records[0].fields["rating"] == 0


def test_unrepaired_type_error_fails_verification_and_drops(tmp_path):
    registry, pipeline = make_env(tmp_path)
    fn = add_function(registry, "tidy", "clean")
    dataset = add_dataset(registry, chain=[fn])
    report = pipeline.ingest_at_rest(dataset, ndjson(
        {"author": "a", "rating": "five"}))
    assert report.records_dropped == 1
    assert report.dropped_by == {"tidy": 1}


def test_sentiment_annotates_under_the_function_name(tmp_path):
    registry, pipeline = make_env(tmp_path)
    fn = add_function(registry, "tone", "sentiment", {"field": "note"})
    dataset = add_dataset(registry, chain=[fn])
    pipeline.ingest_at_rest(dataset, ndjson(
        {"author": "ann", "note": "good, not bad"},
        {"author": "bob", "rating": 1},
    ))
    records = pipeline.store_for(dataset).records
    assert records[0].annotations == {"tone": pytest.approx((0.7 + 0.6) / 2)}
    assert records[1].annotations == {"tone": 0.0}  # missing text scores zero


def test_chain_runs_in_registration_order(tmp_path):
    registry, pipeline = make_env(tmp_path)
    scrub = add_function(registry, "scrub", "minimize",
                         {"drop_fields": ["note"]})
    tone = add_function(registry, "tone", "sentiment", {"field": "note"})
    dataset = add_dataset(registry, chain=[scrub, tone])
    pipeline.ingest_at_rest(dataset, ndjson({"author": "a", "note": "good"}))
    record = pipeline.store_for(dataset).records[0]
    assert record.annotations["tone"] == 0.0  # note was gone before scoring


def test_uniqueness_rule_sees_previously_stored_values(tmp_path):
    registry, pipeline = make_env(tmp_path)
    fn = add_function(registry, "dedupe", "clean", {"rules": [
        {"field": "author", "constraint": "uniqueness",
         "action": "delete_record"}]})
    dataset = add_dataset(registry, chain=[fn])
    first = pipeline.push_stream(dataset, {"author": "ann"})
    duplicate = pipeline.push_stream(dataset, {"author": "ann"})
    other = pipeline.push_stream(dataset, {"author": "bob"})
    assert first["stored"] and other["stored"]
    assert duplicate == {"stored": False, "reason": "dropped",
                         "function": "dedupe"}


def test_predictive_repair_uses_stored_history(tmp_path):
    registry, pipeline = make_env(tmp_path)
    fn = add_function(registry, "tidy", "clean", {"rules": [
        {"field": "rating", "constraint": "range", "min": 0, "max": 10,
         "action": "predict", "strategy": "mean"}]})
    dataset = add_dataset(registry, chain=[fn])
    pipeline.ingest_at_rest(dataset, ndjson(
        {"author": "a", "rating": 4}, {"author": "b", "rating": 6}))
    pipeline.push_stream(dataset, {"author": "c", "rating": 99})
    assert [r.fields["rating"] for r in pipeline.store_for(dataset).records] \
        == [4, 6, 5]


# ---------------------------------------------------------------------------
# stream push
# ---------------------------------------------------------------------------

def test_push_needs_a_stream_dataset(tmp_path):
    registry, pipeline = make_env(tmp_path)
    dataset = add_dataset(registry, source_kind="at_rest")
    with pytest.raises(WrongSourceKind):
        pipeline.push_stream(dataset, {"author": "ann"})


def test_push_returns_the_new_record_id(tmp_path):
    registry, pipeline = make_env(tmp_path)
    dataset = add_dataset(registry)
    assert pipeline.push_stream(dataset, {"author": "ann"}) == \
        {"stored": True, "record_id": 1}
    assert pipeline.push_stream(dataset, {"author": "bob"}) == \
        {"stored": True, "record_id": 2}


def test_push_reports_precheck_failures(tmp_path):
    registry, pipeline = make_env(tmp_path)
    dataset = add_dataset(registry)
    result = pipeline.push_stream(dataset, {"shoe_size": 44})
    assert result == {"stored": False, "reason": "failed", "function": None}
    with pytest.raises(ValidationFailure):
        pipeline.push_stream(dataset, [1, 2])


# ---------------------------------------------------------------------------
# analytics
# ---------------------------------------------------------------------------

def seeded_sentiment_env(tmp_path):
    registry, pipeline = make_env(tmp_path)
    tone = add_function(registry, "tone", "sentiment", {"field": "note"})
    summary = add_function(registry, "tone-summary", "sentiment_summary",
                           {"annotation": "tone"}, kind="analytic")
    dataset = add_dataset(registry, chain=[tone])
    pipeline.ingest_at_rest(dataset, ndjson(
        {"author": "ann", "note": "good"},
        {"author": "bob", "note": "bad"},
        {"author": "cam", "note": "fine"},
    ))
    return registry, pipeline, summary, dataset


def test_sentiment_summary_aggregates_annotations(tmp_path):
    _, pipeline, summary, dataset = seeded_sentiment_env(tmp_path)
    out = pipeline.apply_analytic(summary, dataset)
    assert out["cached"] is False
    assert out["result"] == {"n": 3,
                             "avg": pytest.approx((0.7 - 0.6 + 0.3) / 3),
                             "min": -0.6, "max": 0.7}


def test_analytic_results_are_cached_per_dataset_version(tmp_path):
    _, pipeline, summary, dataset = seeded_sentiment_env(tmp_path)
    first = pipeline.apply_analytic(summary, dataset)
    again = pipeline.apply_analytic(summary, dataset)
    assert again == {"run_id": first["run_id"], "cached": True,
                     "result": first["result"]}
    pipeline.push_stream(dataset, {"author": "dee", "note": "good"})
    fresh = pipeline.apply_analytic(summary, dataset)
    assert fresh["cached"] is False
    assert fresh["run_id"] != first["run_id"]
    assert fresh["result"]["n"] == 4


def test_call_params_override_spec_params(tmp_path):
    _, pipeline, summary, dataset = seeded_sentiment_env(tmp_path)
    out = pipeline.apply_analytic(summary, dataset, {"annotation": "missing"})
    assert out["result"] == {"n": 0, "avg": None, "min": None, "max": None}


def test_only_analytic_functions_apply(tmp_path):
    registry, pipeline, _, dataset = seeded_sentiment_env(tmp_path)
    ingest_fn = add_function(registry, "scrub", "minimize")
    with pytest.raises(UnknownFunction):
        pipeline.apply_analytic(ingest_fn, dataset)
    with pytest.raises(NotFound):
        pipeline.apply_analytic("fn-9999", dataset)


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------

def seeded_query_env(tmp_path):
    registry, pipeline = make_env(tmp_path)
    tone = add_function(registry, "tone", "sentiment", {"field": "note"})
    dataset = add_dataset(registry, chain=[tone])
    pipeline.ingest_at_rest(dataset, ndjson(
        {"author": "ann", "note": "good", "rating": 5},
        {"author": "bob", "note": "bad", "rating": 5},
        {"author": "ann", "note": "fine", "rating": 2},
    ))
    return registry, pipeline, dataset


def test_find_matches_exact_field_values(tmp_path):
    _, pipeline, dataset = seeded_query_env(tmp_path)
    hits = pipeline.find_records(dataset, "author", "ann")
    assert [h["record_id"] for h in hits] == [1, 3]


def test_find_coerces_query_strings_per_schema_type(tmp_path):
    _, pipeline, dataset = seeded_query_env(tmp_path)
    assert len(pipeline.find_records(dataset, "rating", "5")) == 2
    assert len(pipeline.find_records(dataset, "rating", 5)) == 2
    with pytest.raises(ValidationFailure) as err:
        pipeline.find_records(dataset, "rating", "five")
    assert err.value.field == "value"


def test_find_rejects_unknown_fields(tmp_path):
    _, pipeline, dataset = seeded_query_env(tmp_path)
    with pytest.raises(ValidationFailure) as err:
        pipeline.find_records(dataset, "shoe_size", "44")
    assert err.value.field == "field"


def test_find_searches_annotations_with_prefix(tmp_path):
    _, pipeline, dataset = seeded_query_env(tmp_path)
    hits = pipeline.find_records(dataset, "annotations.tone", "0.7")
    assert [h["record_id"] for h in hits] == [1]
    assert hits[0]["annotations"]["tone"] == 0.7


# ---------------------------------------------------------------------------
# erasure
# ---------------------------------------------------------------------------

def test_erase_delete_removes_matching_records(tmp_path):
    _, pipeline, dataset = seeded_query_env(tmp_path)
    out = pipeline.erase_subject(dataset, "author", "ann", mode="delete")
    assert out == {"mode": "delete", "records": 2}
    remaining = pipeline.store_for(dataset).records
    assert [r.fields["author"] for r in remaining] == ["bob"]
    assert pipeline.erase_subject(dataset, "author", "ann",
                                  mode="delete")["records"] == 0


def test_erase_anonymize_blanks_direct_identifiers_only(tmp_path):
    _, pipeline, dataset = seeded_query_env(tmp_path)
    out = pipeline.erase_subject(dataset, "rating", "5", mode="anonymize")
    assert out == {"mode": "anonymize", "records": 2}
    records = pipeline.store_for(dataset).records
    assert [r.fields["author"] for r in records] == [None, None, "ann"]
    assert [r.fields.get("note") for r in records] == ["good", "bad", "fine"]
    # already-blank identifiers do not count as changes the second time
    assert pipeline.erase_subject(dataset, "rating", "5",
                                  mode="anonymize")["records"] == 0


def test_erase_rejects_unknown_mode(tmp_path):
    _, pipeline, dataset = seeded_query_env(tmp_path)
    with pytest.raises(ValidationFailure, match="mode"):
        pipeline.erase_subject(dataset, "author", "ann", mode="shred")


def test_record_ids_stay_monotonic_after_erasing_the_newest(tmp_path):
    _, pipeline, dataset = seeded_query_env(tmp_path)
    pipeline.erase_subject(dataset, "author", "ann", mode="delete")
    out = pipeline.push_stream(dataset, {"author": "dee"})
    assert out["record_id"] == 4


# ---------------------------------------------------------------------------
# retention
# ---------------------------------------------------------------------------

def test_retention_purges_strictly_expired_records(tmp_path):
    clock = StepClock()
    registry, pipeline = make_env(tmp_path, clock=clock)
    dataset = add_dataset(registry, retention_days=30)
    pipeline.push_stream(dataset, {"author": "old"})
    clock.advance(days=10)
    pipeline.push_stream(dataset, {"author": "mid"})
    clock.advance(days=20)  # "old" is exactly 30 days old: not yet expired
    out = pipeline.enforce_retention()
    assert out["purged"] == {dataset: 0}
    clock.advance(seconds=1)
    out = pipeline.enforce_retention()
    assert out["purged"] == {dataset: 1}
    authors = [r.fields["author"] for r in pipeline.store_for(dataset).records]
    assert authors == ["mid"]


def test_unlimited_retention_datasets_are_skipped(tmp_path):
    clock = StepClock()
    registry, pipeline = make_env(tmp_path, clock=clock)
    keep = add_dataset(registry, name="keep", retention_days=None)
    purge = add_dataset(registry, name="purge", retention_days=1)
    pipeline.push_stream(keep, {"author": "ann"})
    pipeline.push_stream(purge, {"author": "ann"})
    clock.advance(days=400)
    out = pipeline.enforce_retention()
    assert out["purged"] == {purge: 1}
    assert keep not in out["purged"]
    assert len(pipeline.store_for(keep).records) == 1


def test_dead_letters_age_out_after_seven_days(tmp_path):
    clock = StepClock()
    registry, pipeline = make_env(tmp_path, clock=clock)
    dataset = add_dataset(registry)
    pipeline.push_stream(dataset, {"bogus": 1})
    clock.advance(days=3)
    pipeline.push_stream(dataset, {"bogus": 2})
    clock.advance(days=5)  # first letter is 8 days old, second is 5
    out = pipeline.enforce_retention()
    assert out["dead_letters_pruned"] == 1
    letters = pipeline.dead_letters(dataset)
    assert [l["record"]["bogus"] for l in letters] == [2]


# ---------------------------------------------------------------------------
# persistence across restarts
# ---------------------------------------------------------------------------

def restart(tmp_path, clock):
    registry = Registry(tmp_path / "state", allow, BUILTINS, clock=clock)
    pipeline = Pipeline(registry, tmp_path / "state", CleaningEngine(),
                        parse_sentiment_lexicon(SENTIMENT_TSV), clock=clock)
    registry.param_validator = pipeline.validate_params
    registry.on_dataset_deleted = pipeline.drop_dataset
    return registry, pipeline


def test_restart_reloads_records_and_annotations(tmp_path):
    clock = StepClock()
    _, pipeline, dataset = seeded_query_env(tmp_path)
    _, reborn = restart(tmp_path, clock)
    hits = reborn.find_records(dataset, "author", "ann")
    assert [h["record_id"] for h in hits] == [1, 3]
    assert hits[0]["annotations"]["tone"] == 0.7


def test_restart_preserves_id_monotonicity_after_erase(tmp_path):
    clock = StepClock()
    registry, pipeline = make_env(tmp_path, clock=clock)
    dataset = add_dataset(registry)
    pipeline.push_stream(dataset, {"author": "ann"})
    pipeline.push_stream(dataset, {"author": "bob"})
    pipeline.erase_subject(dataset, "author", "bob", mode="delete")
    _, reborn = restart(tmp_path, clock)
    assert reborn.push_stream(dataset, {"author": "cam"})["record_id"] == 3


def test_restart_rebuilds_uniqueness_index(tmp_path):
    clock = StepClock()
    registry, pipeline = make_env(tmp_path, clock=clock)
    fn = add_function(registry, "dedupe", "clean", {"rules": [
        {"field": "author", "constraint": "uniqueness",
         "action": "delete_record"}]})
    dataset = add_dataset(registry, chain=[fn])
    pipeline.push_stream(dataset, {"author": "ann"})
    _, reborn = restart(tmp_path, clock)
    assert reborn.push_stream(dataset, {"author": "ann"})["stored"] is False


def test_dropping_a_dataset_removes_its_files(tmp_path):
    registry, pipeline = make_env(tmp_path)
    dataset = add_dataset(registry)
    pipeline.push_stream(dataset, {"author": "ann"})
    pipeline.push_stream(dataset, {"bogus": 1})
    records = tmp_path / "state" / "records" / f"{dataset}.ndjson"
    meta = tmp_path / "state" / "records" / f"{dataset}.meta.json"
    letters = tmp_path / "state" / "deadletter" / f"{dataset}.ndjson"
    assert records.exists() and meta.exists() and letters.exists()
    registry.delete_artifact(dataset, "ada")
    assert not records.exists()
    assert not meta.exists()
    assert not letters.exists()


def test_functions_stay_reusable_after_their_dataset_is_deleted(tmp_path):
    registry, pipeline = make_env(tmp_path)
    fn = add_function(registry, "scrub", "minimize")
    dataset = add_dataset(registry, chain=[fn], source_kind="at_rest")
    registry.delete_artifact(dataset, "ada")
    dataset2 = add_dataset(registry, name="other", chain=[fn])
    assert pipeline.push_stream(dataset2, {"author": "a"})["stored"]


def test_crashing_function_routes_records_to_dead_letters(tmp_path, monkeypatch):
    registry, pipeline = make_env(tmp_path)
    fn = add_function(registry, "tone", "sentiment", {"field": "note"})
    dataset = add_dataset(registry, chain=[fn])

    def explode(fn, record):
        raise RuntimeError("lexicon went missing")

    monkeypatch.setattr(pipeline, "_builtin_sentiment", explode)
    report = pipeline.ingest_at_rest(dataset, ndjson({"note": "good"}))
    assert (report.records_failed, report.records_stored) == (1, 0)
    assert report.dropped_by == {"tone": 1}
    letters = pipeline.dead_letters(dataset)
    assert letters[0]["function"] == "tone"
    assert "lexicon went missing" in letters[0]["reason"]
    out = pipeline.push_stream(dataset, {"note": "good"})
    assert out == {"stored": False, "reason": "failed", "function": "tone"}


def test_function_failure_wraps_builtin_exceptions(tmp_path):
    registry, pipeline = make_env(tmp_path)
    fn = add_function(registry, "tone", "sentiment", {"field": "note"})
    dataset = add_dataset(registry, chain=[fn])
    store = pipeline.store_for(dataset)
    resolved = pipeline._resolve_chain(registry.get_dataset(dataset))
    broken = Record(fields={"note": "good"})
    broken.annotations = None  # force a TypeError inside the builtin
    with pytest.raises(FunctionFailure, match="tone"):
        pipeline._apply_function(resolved[0], broken,
                                 registry.get_dataset(dataset), store)
