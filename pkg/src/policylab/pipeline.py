"""Dataset ingestion pipelines and record storage.

Records flow through a dataset's ingest chain (registered ingest functions,
applied in order); each function may rewrite the record, annotate it, or drop
it. Failures are routed to a per-dataset dead-letter file kept for seven
days. Stored records live in memory and are mirrored to newline-delimited
JSON under the state directory so a restart reloads them.
"""
from __future__ import annotations

import hashlib
import json
import threading
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Mapping

from .cleaning import CleaningEngine, tokenize
from .errors import (FunctionFailure, SourceParseError, UnknownFunction,
                     ValidationFailure, WrongSourceKind)
from .jsonutil import (canonical_dumps, format_rfc3339, parse_rfc3339,
                       utc_now)

DEADLETTER_RETENTION_DAYS = 7

BUILTIN_INGEST = ("minimize", "clean", "sentiment")
BUILTIN_ANALYTIC = ("sentiment_summary",)

_SCALAR = (str, int, float, bool, type(None))


@dataclass
class Record:
    """One stored record: payload fields plus pipeline annotations."""

    fields: dict
    record_id: int = 0
    ingest_time: str = ""
    annotations: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {"record_id": self.record_id, "ingest_time": self.ingest_time,
                "fields": dict(self.fields), "annotations": dict(self.annotations)}

    @classmethod
    def from_doc(cls, doc: Mapping) -> "Record":
        return cls(fields=dict(doc["fields"]), record_id=doc["record_id"],
                   ingest_time=doc["ingest_time"],
                   annotations=dict(doc.get("annotations", {})))


# ---------------------------------------------------------------------------
# sentiment lexicon
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SentimentLexicon:
    scores: Mapping[str, float]
    negators: frozenset


def parse_sentiment_lexicon(text: str) -> SentimentLexicon:
    """Tab-separated token/score pairs; ``#negator <token>`` lines declare
    polarity-flipping tokens, any other ``#`` line is a comment."""
    scores: dict[str, float] = {}
    negators: set[str] = set()
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts and parts[0] == "negator" and len(parts) > 1:
                negators.add(parts[1].lower())
            continue
        token, _, score = line.partition("\t")
        scores[token.strip().lower()] = float(score.strip())
    return SentimentLexicon(scores=scores, negators=frozenset(negators))


def load_sentiment_lexicon(path) -> SentimentLexicon:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_sentiment_lexicon(fh.read())


def score_text(text: str, lexicon: SentimentLexicon) -> float:
    """Mean lexicon score over matching tokens, clamped into [-1, 1].

    A negator flips the polarity of the next scored token when it occurs
    within three tokens; stacked negators cancel pairwise and are consumed
    by the hit whether or not they were close enough to flip it.
    """
    tokens = tokenize(text)
    contributions: list[float] = []
    pending: list[int] = []
    for index, token in enumerate(tokens):
        if token in lexicon.negators:
            pending.append(index)
            continue
        score = lexicon.scores.get(token)
        if score is None:
            continue
        flips = sum(1 for pos in pending if index - pos <= 3)
        pending.clear()
        if flips % 2 == 1:
            score = -score
        contributions.append(score)
    if not contributions:
        return 0.0
    mean = sum(contributions) / len(contributions)
    return max(-1.0, min(1.0, mean))


# ---------------------------------------------------------------------------
# stored datasets
# ---------------------------------------------------------------------------

class StoredDataset:
    """In-memory record set for one dataset, mirrored to an NDJSON file.

    Tracks per-field value counts (for uniqueness checks) and a per-field
    history of stored values (for predictive repair). Both are updated only
    when a record is actually stored, so records dropped mid-chain leave no
    trace.
    """

    def __init__(self, dataset_id: str, path: Path):
        self.dataset_id = dataset_id
        self.path = path
        self.records: list[Record] = []
        self.next_record_id = 1
        self.version = 0
        self._counts: dict[str, Counter] = {}
        self._history: dict[str, list] = {}
        self.lock = threading.RLock()

    # -- load / persist -----------------------------------------------------

    @property
    def _meta_path(self) -> Path:
        return self.path.with_suffix(".meta.json")

    def load(self) -> None:
        if self._meta_path.exists():
            with open(self._meta_path, "r", encoding="utf-8") as fh:
                self.next_record_id = json.load(fh)["next_record_id"]
        if not self.path.exists():
            return
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                self._index(self._append_record(Record.from_doc(json.loads(line))))

    def _persist_meta(self) -> None:
        # record ids must stay monotonic even after the newest record is
        # erased, so the counter is persisted separately
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self._meta_path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(canonical_dumps({"next_record_id": self.next_record_id}))
        tmp.replace(self._meta_path)

    def _append_record(self, record: Record) -> Record:
        self.records.append(record)
        self.next_record_id = max(self.next_record_id, record.record_id + 1)
        return record

    def _index(self, record: Record) -> None:
        for name, value in record.fields.items():
            if value is None:
                continue
            self._counts.setdefault(name, Counter())[value] += 1
            self._history.setdefault(name, []).append(value)

    def _rebuild_index(self) -> None:
        self._counts.clear()
        self._history.clear()
        for record in self.records:
            self._index(record)

    def _persist_all(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(canonical_dumps(record.to_doc()) + "\n")
        tmp.replace(self.path)

    # -- pipeline hooks -----------------------------------------------------

    def value_seen(self, field_name: str, value) -> bool:
        counter = self._counts.get(field_name)
        return bool(counter) and counter.get(value, 0) > 0

    def history_view(self) -> Mapping[str, list]:
        return self._history

    # -- mutation -----------------------------------------------------------

    def store(self, record: Record, now: datetime) -> Record:
        with self.lock:
            record.record_id = self.next_record_id
            self.next_record_id += 1
            record.ingest_time = format_rfc3339(now)
            self.records.append(record)
            self._index(record)
            self.version += 1
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(canonical_dumps(record.to_doc()) + "\n")
            self._persist_meta()
            return record

    def remove_where(self, predicate: Callable[[Record], bool]) -> int:
        with self.lock:
            keep = [r for r in self.records if not predicate(r)]
            removed = len(self.records) - len(keep)
            if removed:
                self.records = keep
                self._rebuild_index()
                self.version += 1
                self._persist_all()
            return removed

    def rewrite(self, mutate: Callable[[Record], bool]) -> int:
        """Apply ``mutate`` to every record; it returns True when it changed
        one. Rewrites the store when anything changed."""
        with self.lock:
            changed = sum(1 for record in self.records if mutate(record))
            if changed:
                self._rebuild_index()
                self.version += 1
                self._persist_all()
            return changed


# ---------------------------------------------------------------------------
# ingest reporting
# ---------------------------------------------------------------------------

@dataclass
class IngestReport:
    records_in: int = 0
    records_stored: int = 0
    records_dropped: int = 0
    records_failed: int = 0
    dropped_by: Counter = field(default_factory=Counter)

    def to_doc(self) -> dict:
        return {
            "records_in": self.records_in,
            "records_stored": self.records_stored,
            "records_dropped": self.records_dropped,
            "records_failed": self.records_failed,
            "dropped_by": dict(sorted(self.dropped_by.items())),
        }


@dataclass(frozen=True)
class ResolvedFunction:
    function_id: str
    name: str
    builtin_ref: str
    params: Mapping


class Pipeline:
    """Executes ingest chains and dataset-level data operations."""

    def __init__(self, registry, state_dir, cleaning: CleaningEngine,
                 sentiment: SentimentLexicon, clock: Callable = utc_now):
        self.registry = registry
        self.state_dir = Path(state_dir)
        self.cleaning = cleaning
        self.sentiment = sentiment
        self.clock = clock
        self._stores: dict[str, StoredDataset] = {}
        self._analytic_cache: dict[str, dict] = {}
        self._lock = threading.RLock()
        self._load_existing()

    # -- stores -------------------------------------------------------------

    def _records_path(self, dataset_id: str) -> Path:
        return self.state_dir / "records" / f"{dataset_id}.ndjson"

    def _deadletter_path(self, dataset_id: str) -> Path:
        return self.state_dir / "deadletter" / f"{dataset_id}.ndjson"

    def _load_existing(self) -> None:
        for dataset_id in self.registry.dataset_ids():
            self.store_for(dataset_id)

    def store_for(self, dataset_id: str) -> StoredDataset:
        with self._lock:
            store = self._stores.get(dataset_id)
            if store is None:
                store = StoredDataset(dataset_id, self._records_path(dataset_id))
                store.load()
                self._stores[dataset_id] = store
            return store

    def drop_dataset(self, dataset_id: str) -> None:
        """Purge stored records and dead letters for a deleted dataset."""
        with self._lock:
            self._stores.pop(dataset_id, None)
        records = self._records_path(dataset_id)
        for path in (records, records.with_suffix(".meta.json"),
                     self._deadletter_path(dataset_id)):
            if path.exists():
                path.unlink()

    # -- dead letters -------------------------------------------------------

    def _dead_letter(self, dataset_id: str, reason: str, function: str | None,
                     fields: Mapping) -> None:
        path = self._deadletter_path(dataset_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        entry = {"time": format_rfc3339(self.clock()), "reason": reason,
                 "function": function, "record": dict(fields)}
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(canonical_dumps(entry) + "\n")

    def dead_letters(self, dataset_id: str) -> list[dict]:
        path = self._deadletter_path(dataset_id)
        if not path.exists():
            return []
        with open(path, "r", encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]

    # -- function parameter validation (used by the registry) ---------------

    def validate_params(self, builtin_ref: str, params: Mapping) -> None:
        def fail(message, key):
            raise ValidationFailure(message, field=f"params.{key}")

        if builtin_ref == "minimize":
            drop = params.get("drop_fields", [])
            if not (isinstance(drop, list) and all(isinstance(n, str) for n in drop)):
                fail("drop_fields must be a list of field names", "drop_fields")
            if not isinstance(params.get("drop_identifiers", False), bool):
                fail("drop_identifiers must be a boolean", "drop_identifiers")
        elif builtin_ref == "clean":
            from .cleaning import parse_rules
            parse_rules(params.get("rules", []))
            domain = params.get("domain")
            if domain is not None and not isinstance(domain, str):
                fail("domain must be a string", "domain")
        elif builtin_ref == "sentiment":
            if not isinstance(params.get("field"), str) or not params.get("field"):
                fail("sentiment needs the text field name", "field")
        elif builtin_ref == "sentiment_summary":
            annotation = params.get("annotation")
            if annotation is not None and not isinstance(annotation, str):
                fail("annotation must be a string", "annotation")

    # -- chain execution ----------------------------------------------------

    def _resolve_chain(self, dataset_doc: Mapping) -> list[ResolvedFunction]:
        chain = []
        for function_id in dataset_doc.get("ingest_chain", []):
            rec = self.registry.get_function(function_id)
            if rec["kind"] != "ingest":
                raise UnknownFunction(f"{function_id} is not an ingest function")
            chain.append(ResolvedFunction(function_id=function_id,
                                          name=rec["name"],
                                          builtin_ref=rec["builtin_ref"],
                                          params=rec["params"]))
        return chain

    def _schema_check(self, fields: Mapping, dataset_doc: Mapping) -> str | None:
        """Pre-ingest shape check: unknown fields and non-scalar values are
        rejected here; value types are deliberately left to the cleaning
        stage so badly typed values can be repaired instead of bounced."""
        known = {f["name"] for f in dataset_doc["schema"]}
        for name, value in fields.items():
            if name not in known:
                return f"unknown field {name!r}"
            if not isinstance(value, _SCALAR):
                return f"field {name!r} must be a scalar value"
        return None

    def _apply_function(self, fn: ResolvedFunction, record: Record,
                        dataset_doc: Mapping,
                        store: StoredDataset) -> Record | None:
        try:
            if fn.builtin_ref == "minimize":
                return self._builtin_minimize(fn.params, record, dataset_doc)
            if fn.builtin_ref == "clean":
                return self._builtin_clean(fn.params, record, dataset_doc, store)
            if fn.builtin_ref == "sentiment":
                return self._builtin_sentiment(fn, record)
            raise FunctionFailure(f"no ingest builtin {fn.builtin_ref!r}")
        except FunctionFailure:
            raise
        except Exception as exc:  # builtin bug or bad data shape
            raise FunctionFailure(f"{fn.name}: {exc}") from exc

    def _builtin_minimize(self, params: Mapping, record: Record,
                          dataset_doc: Mapping) -> Record:
        drop = set(params.get("drop_fields", []))
        if params.get("drop_identifiers", False):
            drop.update(f["name"] for f in dataset_doc["schema"]
                        if f["identifier_class"] == "direct_identifier")
        record.fields = {k: v for k, v in record.fields.items() if k not in drop}
        return record

    def _builtin_clean(self, params: Mapping, record: Record,
                       dataset_doc: Mapping,
                       store: StoredDataset) -> Record | None:
        from .cleaning import parse_rules
        rules = list(parse_rules(params.get("rules", [])))
        for field_doc in dataset_doc["schema"]:
            for rule_doc in field_doc.get("rules", []):
                merged = dict(rule_doc)
                merged.setdefault("field", field_doc["name"])
                rules.extend(parse_rules([merged]))
        domain = params.get("domain") or dataset_doc.get("domain_hint")
        schema_types = {f["name"]: f["value_type"] for f in dataset_doc["schema"]}
        outcome, report = self.cleaning.process(
            record.fields, schema_types, rules, domain=domain,
            history=store.history_view(), uniqueness=store.value_seen)
        if outcome.status == "dropped" or not report.passed:
            return None
        record.fields = dict(outcome.record)
        return record

    def _builtin_sentiment(self, fn: ResolvedFunction, record: Record) -> Record:
        value = record.fields.get(fn.params["field"])
        score = score_text(value, self.sentiment) if isinstance(value, str) else 0.0
        # annotation key is the registered function name, not the builtin ref
        record.annotations[fn.name] = score
        return record

    def _ingest_one(self, fields: Mapping, dataset_doc: Mapping,
                    chain: list[ResolvedFunction], store: StoredDataset,
                    report: IngestReport) -> Record | None:
        report.records_in += 1
        problem = self._schema_check(fields, dataset_doc)
        if problem is not None:
            report.records_failed += 1
            self._dead_letter(dataset_doc["id"], problem, None, fields)
            return None
        record = Record(fields=dict(fields))
        for fn in chain:
            try:
                result = self._apply_function(fn, record, dataset_doc, store)
            except FunctionFailure as exc:
                report.records_failed += 1
                report.dropped_by[fn.name] += 1
                self._dead_letter(dataset_doc["id"], exc.message, fn.name,
                                  record.fields)
                return None
            if result is None:
                report.records_dropped += 1
                report.dropped_by[fn.name] += 1
                return None
            record = result
        stored = store.store(record, self.clock())
        report.records_stored += 1
        return stored

    # -- ingest entry points ------------------------------------------------

    def ingest_at_rest(self, dataset_id: str, payload: str | bytes) -> IngestReport:
        """Parse an NDJSON batch and run every record through the chain.

        Parsing is all-or-nothing: one malformed line rejects the whole
        batch before any record is processed.
        """
        dataset_doc = self.registry.get_dataset(dataset_id)
        if isinstance(payload, bytes):
            payload = payload.decode("utf-8")
        docs = []
        for lineno, line in enumerate(payload.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SourceParseError(f"line {lineno}: {exc.msg}", line=lineno)
            if not isinstance(doc, dict):
                raise SourceParseError(f"line {lineno}: record must be an object",
                                       line=lineno)
            docs.append(doc)
        chain = self._resolve_chain(dataset_doc)
        store = self.store_for(dataset_id)
        report = IngestReport()
        for doc in docs:
            self._ingest_one(doc, dataset_doc, chain, store, report)
        return report

    def push_stream(self, dataset_id: str, doc: Mapping) -> dict:
        """Single-record push; only stream datasets accept it."""
        dataset_doc = self.registry.get_dataset(dataset_id)
        if dataset_doc["source_kind"] != "stream":
            raise WrongSourceKind(
                f"dataset {dataset_id} ingests at rest; push needs a stream "
                f"dataset")
        if not isinstance(doc, Mapping):
            raise ValidationFailure("record must be an object", field="")
        chain = self._resolve_chain(dataset_doc)
        store = self.store_for(dataset_id)
        report = IngestReport()
        stored = self._ingest_one(doc, dataset_doc, chain, store, report)
        if stored is None:
            reason = "failed" if report.records_failed else "dropped"
            function = next(iter(report.dropped_by), None)
            return {"stored": False, "reason": reason, "function": function}
        return {"stored": True, "record_id": stored.record_id}

    # -- analytics ----------------------------------------------------------

    def apply_analytic(self, function_id: str, dataset_id: str,
                       params: Mapping | None = None) -> dict:
        rec = self.registry.get_function(function_id)
        if rec["kind"] != "analytic":
            raise UnknownFunction(f"{function_id} is not an analytic function")
        self.registry.get_dataset(dataset_id)
        store = self.store_for(dataset_id)
        merged = dict(rec["params"])
        merged.update(params or {})
        with store.lock:
            key_doc = {"function": function_id, "dataset": dataset_id,
                       "params": merged, "version": store.version}
            run_id = hashlib.sha256(
                canonical_dumps(key_doc).encode("utf-8")).hexdigest()[:16]
            cached = self._analytic_cache.get(run_id)
            if cached is not None:
                return {"run_id": run_id, "cached": True, "result": cached}
            if rec["builtin_ref"] == "sentiment_summary":
                result = self._analytic_sentiment_summary(store, merged)
            else:
                raise FunctionFailure(f"no analytic builtin {rec['builtin_ref']!r}")
            self._analytic_cache[run_id] = result
            return {"run_id": run_id, "cached": False, "result": result}

    def _analytic_sentiment_summary(self, store: StoredDataset,
                                    params: Mapping) -> dict:
        key = params.get("annotation", "sentiment")
        values = [r.annotations[key] for r in store.records
                  if key in r.annotations]
        if not values:
            return {"n": 0, "avg": None, "min": None, "max": None}
        return {"n": len(values), "avg": sum(values) / len(values),
                "min": min(values), "max": max(values)}

    # -- queries and subject rights -----------------------------------------

    def _coerce_query_value(self, dataset_doc: Mapping, field_name: str,
                            value):
        if field_name.startswith("annotations."):
            try:
                return float(value)
            except (TypeError, ValueError):
                return value
        for field_doc in dataset_doc["schema"]:
            if field_doc["name"] != field_name:
                continue
            if not isinstance(value, str):
                return value
            vt = field_doc["value_type"]
            try:
                if vt == "integer":
                    return int(value)
                if vt == "real":
                    return float(value)
                if vt == "boolean":
                    if value.lower() in ("true", "false"):
                        return value.lower() == "true"
                    raise ValueError(value)
            except ValueError:
                raise ValidationFailure(
                    f"value {value!r} does not parse as {vt}", field="value")
            return value
        raise ValidationFailure(f"dataset has no field {field_name!r}",
                                field="field")

    def _matches(self, record: Record, field_name: str, value) -> bool:
        if field_name.startswith("annotations."):
            key = field_name[len("annotations."):]
            return key in record.annotations and record.annotations[key] == value
        return (field_name in record.fields
                and record.fields[field_name] == value)

    def find_records(self, dataset_id: str, field_name: str, value) -> list[dict]:
        dataset_doc = self.registry.get_dataset(dataset_id)
        store = self.store_for(dataset_id)
        value = self._coerce_query_value(dataset_doc, field_name, value)
        with store.lock:
            return [r.to_doc() for r in store.records
                    if self._matches(r, field_name, value)]

    def erase_subject(self, dataset_id: str, field_name: str, value,
                      mode: str = "delete") -> dict:
        """Remove (or blank the direct identifiers of) every matching record."""
        dataset_doc = self.registry.get_dataset(dataset_id)
        store = self.store_for(dataset_id)
        value = self._coerce_query_value(dataset_doc, field_name, value)
        if mode == "delete":
            removed = store.remove_where(
                lambda r: self._matches(r, field_name, value))
            return {"mode": mode, "records": removed}
        if mode != "anonymize":
            raise ValidationFailure(
                f"mode must be delete or anonymize, got {mode!r}", field="mode")
        identifier_fields = [f["name"] for f in dataset_doc["schema"]
                             if f["identifier_class"] == "direct_identifier"]

        def blank(record: Record) -> bool:
            if not self._matches(record, field_name, value):
                return False
            hit = False
            for name in identifier_fields:
                if record.fields.get(name) is not None:
                    record.fields[name] = None
                    hit = True
            return hit

        changed = store.rewrite(blank)
        return {"mode": mode, "records": changed}

    # -- retention ----------------------------------------------------------

    def enforce_retention(self, now: datetime | None = None) -> dict:
        """Purge expired records dataset by dataset and age out dead letters.

        A record expires when ingest_time + retention_days is strictly in
        the past; datasets with unlimited retention are skipped.
        """
        now = now or self.clock()
        purged: dict[str, int] = {}
        for dataset_id in self.registry.dataset_ids():
            doc = self.registry.get_dataset(dataset_id)
            retention = doc.get("retention_days")
            if retention is None:
                continue

            def expired(record: Record) -> bool:
                stamp = parse_rfc3339(record.ingest_time)
                return stamp + timedelta(days=retention) < now

            purged[dataset_id] = self.store_for(dataset_id).remove_where(expired)
        dead = self._prune_dead_letters(now)
        return {"purged": purged, "dead_letters_pruned": dead}

    def _prune_dead_letters(self, now: datetime) -> int:
        base = self.state_dir / "deadletter"
        if not base.exists():
            return 0
        horizon = now - timedelta(days=DEADLETTER_RETENTION_DAYS)
        pruned = 0
        for path in sorted(base.glob("*.ndjson")):
            entries = []
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        entries.append(json.loads(line))
            keep = [e for e in entries if parse_rfc3339(e["time"]) >= horizon]
            pruned += len(entries) - len(keep)
            if len(keep) != len(entries):
                tmp = path.with_suffix(".tmp")
                with open(tmp, "w", encoding="utf-8") as fh:
                    for entry in keep:
                        fh.write(canonical_dumps(entry) + "\n")
                tmp.replace(path)
        return pruned
