"""Artifact registry: ingest/analytic function specs and dataset specs.

Every artifact carries a compliance document describing bias measures, legal
constraints, analysis trade-offs, and concept definitions; registration is
refused without one. Artifacts get opaque monotonic ids (``fn-0001``,
``ds-0001``), are persisted one JSON document per artifact plus an index, and
are updated by versioned replacement: the old version stays readable and
points at its successor. Registration is atomic; a validation failure leaves
no partial state.
"""
from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .cleaning import KNOWN_DOMAINS, VALUE_TYPES
from .errors import (DuplicateName, InUse, InvalidComplianceDoc,
                     InvalidRetention, MissingComplianceDoc, NotFound,
                     UnknownBuiltin, UnknownFunction, ValidationFailure)
from .jsonutil import canonical_dumps, format_rfc3339, utc_now

FUNCTION_KINDS = ("ingest", "analytic")
SOURCE_KINDS = ("stream", "at_rest")
IDENTIFIER_CLASSES = ("none", "direct_identifier")

ACTION_REGISTER_FUNCTION = "register_function"
ACTION_REGISTER_DATASET = "register_dataset"
ACTION_DELETE = "delete_artifact"
ACTION_LIST = "list"


# ---------------------------------------------------------------------------
# document validation
# ---------------------------------------------------------------------------

def _require(cond: bool, message: str, field: str):
    if not cond:
        raise ValidationFailure(message, field=field)


def validate_compliance(doc, schema_fields: Sequence[str] | None,
                        path: str = "compliance") -> dict:
    """Check a compliance document; returns it unchanged on success.

    At least one of bias_measures / bias_statistics must be non-empty, every
    bias fraction must lie in [0, 1], and concept notes may only reference
    fields that exist in the dataset schema.
    """
    if doc is None or doc == {}:
        raise MissingComplianceDoc("artifact has no compliance document")
    if not isinstance(doc, dict):
        raise InvalidComplianceDoc("compliance document must be an object")
    measures = doc.get("bias_measures", "")
    if not isinstance(measures, str):
        raise InvalidComplianceDoc("bias_measures must be text",
                                   field=f"{path}.bias_measures")
    stats = doc.get("bias_statistics", [])
    if not isinstance(stats, list):
        raise InvalidComplianceDoc("bias_statistics must be a list",
                                   field=f"{path}.bias_statistics")
    for i, stat in enumerate(stats):
        spath = f"{path}.bias_statistics[{i}]"
        if not isinstance(stat, dict) or not isinstance(stat.get("statement"), str):
            raise InvalidComplianceDoc("bias statistic needs a statement",
                                       field=spath)
        fraction = stat.get("fraction")
        if (isinstance(fraction, bool) or not isinstance(fraction, (int, float))
                or not 0.0 <= fraction <= 1.0):
            raise InvalidComplianceDoc(
                f"bias fraction must lie in [0, 1], got {fraction!r}",
                field=f"{spath}.fraction")
    if not measures.strip() and not stats:
        raise MissingComplianceDoc(
            "compliance document needs bias_measures text or bias_statistics")
    for key in ("legal_constraints", "tradeoffs"):
        if key in doc and not isinstance(doc[key], str):
            raise InvalidComplianceDoc(f"{key} must be text", field=f"{path}.{key}")
    notes = doc.get("concept_notes", [])
    if not isinstance(notes, list):
        raise InvalidComplianceDoc("concept_notes must be a list",
                                   field=f"{path}.concept_notes")
    for i, note in enumerate(notes):
        npath = f"{path}.concept_notes[{i}]"
        if (not isinstance(note, dict) or not isinstance(note.get("field_name"), str)
                or not isinstance(note.get("definition"), str)):
            raise InvalidComplianceDoc(
                "concept note needs field_name and definition", field=npath)
        if schema_fields is not None and note["field_name"] not in schema_fields:
            raise InvalidComplianceDoc(
                f"concept note references unknown field {note['field_name']!r}",
                field=f"{npath}.field_name")
    return doc


def validate_field_schema(doc, path: str) -> dict:
    _require(isinstance(doc, dict), "schema field must be an object", path)
    name = doc.get("name")
    _require(isinstance(name, str) and bool(name),
             "schema field needs a name", f"{path}.name")
    _require(doc.get("value_type") in VALUE_TYPES,
             f"value_type must be one of {VALUE_TYPES}", f"{path}.value_type")
    identifier_class = doc.get("identifier_class", "none")
    _require(identifier_class in IDENTIFIER_CLASSES,
             f"identifier_class must be one of {IDENTIFIER_CLASSES}",
             f"{path}.identifier_class")
    rules = doc.get("rules", [])
    _require(isinstance(rules, list), "field rules must be a list", f"{path}.rules")
    return {"name": name, "value_type": doc["value_type"],
            "identifier_class": identifier_class, "rules": rules}


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

class Registry:
    """Thread-safe artifact registry with on-disk persistence.

    ``authorize(subject, action, resource_attrs)`` must raise AccessDenied
    when the caller is not allowed; ``builtins`` maps function kind to the
    names of known built-in implementations; ``param_validator`` may perform
    builtin-specific parameter checks.
    """

    def __init__(self, state_dir, authorize: Callable,
                 builtins: Mapping[str, Sequence[str]],
                 param_validator: Callable | None = None,
                 on_dataset_deleted: Callable | None = None,
                 clock: Callable = utc_now):
        self.base = Path(state_dir) / "registry"
        self.authorize = authorize
        self.builtins = {kind: tuple(names) for kind, names in builtins.items()}
        self.param_validator = param_validator
        self.on_dataset_deleted = on_dataset_deleted
        self.clock = clock
        self._lock = threading.RLock()
        self._artifacts: dict[str, dict] = {}
        self._next = {"fn": 1, "ds": 1}
        self._load()

    # -- persistence --------------------------------------------------------

    def _load(self) -> None:
        index_path = self.base / "index.json"
        if not index_path.exists():
            return
        with open(index_path, "r", encoding="utf-8") as fh:
            index = json.load(fh)
        self._next.update(index.get("next", {}))
        for artifact_id in index.get("ids", []):
            kind_dir = "dataset" if artifact_id.startswith("ds-") else "function"
            path = self.base / kind_dir / f"{artifact_id}.json"
            with open(path, "r", encoding="utf-8") as fh:
                self._artifacts[artifact_id] = json.load(fh)

    def _write_json(self, path: Path, doc: dict) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(canonical_dumps(doc))
        os.replace(tmp, path)

    def _persist(self, record: dict) -> None:
        kind_dir = "dataset" if record["id"].startswith("ds-") else "function"
        self._write_json(self.base / kind_dir / f"{record['id']}.json", record)
        self._write_json(self.base / "index.json", {
            "next": dict(self._next),
            "ids": sorted(self._artifacts.keys() | {record["id"]}),
        })

    def _allocate_id(self, prefix: str) -> str:
        number = self._next[prefix]
        self._next[prefix] = number + 1
        return f"{prefix}-{number:04d}"

    # -- helpers ------------------------------------------------------------

    def _active(self):
        return (rec for rec in self._artifacts.values()
                if rec.get("superseded_by") is None)

    def _check_name_free(self, name: str, klass: str, kind: str | None) -> None:
        for rec in self._active():
            if rec["class"] != klass or rec["name"] != name:
                continue
            if klass == "function" and rec["kind"] != kind:
                continue
            raise DuplicateName(f"{klass} name {name!r} is already registered")

    def get(self, artifact_id: str) -> dict:
        with self._lock:
            rec = self._artifacts.get(artifact_id)
            if rec is None:
                raise NotFound(f"no artifact {artifact_id!r}")
            return json.loads(json.dumps(rec))

    def get_function(self, function_id: str) -> dict:
        rec = self.get(function_id)
        if rec["class"] != "function":
            raise UnknownFunction(f"{function_id!r} is not a function")
        return rec

    def get_dataset(self, dataset_id: str) -> dict:
        rec = self.get(dataset_id)
        if rec["class"] != "dataset":
            raise NotFound(f"{dataset_id!r} is not a dataset")
        return rec

    def dataset_ids(self) -> list[str]:
        with self._lock:
            return sorted(rid for rid, rec in self._artifacts.items()
                          if rec["class"] == "dataset")

    # -- validation ---------------------------------------------------------

    def _validate_function(self, doc: Mapping) -> dict:
        _require(isinstance(doc, dict), "function spec must be an object", "")
        name = doc.get("name")
        _require(isinstance(name, str) and bool(name),
                 "function needs a name", "name")
        kind = doc.get("kind")
        _require(kind in FUNCTION_KINDS,
                 f"kind must be one of {FUNCTION_KINDS}", "kind")
        builtin_ref = doc.get("builtin_ref")
        known = self.builtins.get(kind, ())
        if builtin_ref not in known:
            raise UnknownBuiltin(
                f"unknown {kind} builtin {builtin_ref!r}; known: {', '.join(known)}")
        params = doc.get("params") or {}
        _require(isinstance(params, dict), "params must be an object", "params")
        if self.param_validator is not None:
            self.param_validator(builtin_ref, params)
        compliance = validate_compliance(doc.get("compliance"), None)
        owner = doc.get("owner")
        _require(isinstance(owner, str) and bool(owner),
                 "function needs an owner", "owner")
        record = {
            "class": "function",
            "name": name,
            "kind": kind,
            "builtin_ref": builtin_ref,
            "params": params,
            "compliance": compliance,
            "owner": owner,
        }
        for key in ("input_schema", "output_schema"):
            if doc.get(key) is not None:
                _require(isinstance(doc[key], str), f"{key} must be a string", key)
                record[key] = doc[key]
        return record

    def _validate_dataset(self, doc: Mapping) -> dict:
        _require(isinstance(doc, dict), "dataset spec must be an object", "")
        name = doc.get("name")
        _require(isinstance(name, str) and bool(name), "dataset needs a name", "name")
        source_kind = doc.get("source_kind")
        _require(source_kind in SOURCE_KINDS,
                 f"source_kind must be one of {SOURCE_KINDS}", "source_kind")
        raw_schema = doc.get("schema") or []
        _require(isinstance(raw_schema, list), "schema must be a list", "schema")
        schema = [validate_field_schema(f, f"schema[{i}]")
                  for i, f in enumerate(raw_schema)]
        names = [f["name"] for f in schema]
        _require(len(names) == len(set(names)),
                 "schema field names must be unique", "schema")
        chain = doc.get("ingest_chain") or []
        _require(isinstance(chain, list), "ingest_chain must be a list",
                 "ingest_chain")
        for i, function_id in enumerate(chain):
            rec = self._artifacts.get(function_id)
            if rec is None or rec["class"] != "function":
                raise UnknownFunction(f"ingest_chain[{i}]: no function "
                                      f"{function_id!r}")
            if rec["kind"] != "ingest":
                raise UnknownFunction(
                    f"ingest_chain[{i}]: {function_id!r} is an analytic "
                    f"function, not an ingest function")
        retention = doc.get("retention_days")
        if retention is not None:
            if (isinstance(retention, bool) or not isinstance(retention, int)
                    or retention <= 0):
                raise InvalidRetention(
                    f"retention_days must be a positive integer or null, "
                    f"got {retention!r}")
        domain_hint = doc.get("domain_hint")
        if domain_hint is not None:
            _require(domain_hint in KNOWN_DOMAINS + ("generic",),
                     f"unknown domain {domain_hint!r}", "domain_hint")
        compliance = validate_compliance(doc.get("compliance"), names)
        owner = doc.get("owner")
        _require(isinstance(owner, str) and bool(owner),
                 "dataset needs an owner", "owner")
        return {
            "class": "dataset",
            "name": name,
            "source_kind": source_kind,
            "schema": schema,
            "ingest_chain": list(chain),
            "retention_days": retention,
            "domain_hint": domain_hint,
            "compliance": compliance,
            "owner": owner,
        }

    # -- operations ---------------------------------------------------------

    def register_function(self, doc: Mapping, subject) -> str:
        self.authorize(subject, ACTION_REGISTER_FUNCTION, {
            "kind": "function",
            "name": str((doc or {}).get("name", "")),
            "owner": str((doc or {}).get("owner", "")),
        })
        with self._lock:
            record = self._validate_function(doc)
            self._check_name_free(record["name"], "function", record["kind"])
            record["id"] = self._allocate_id("fn")
            record["version"] = 1
            record["superseded_by"] = None
            record["created_at"] = format_rfc3339(self.clock())
            self._persist(record)
            self._artifacts[record["id"]] = record
            return record["id"]

    def register_dataset(self, doc: Mapping, subject) -> str:
        self.authorize(subject, ACTION_REGISTER_DATASET, {
            "kind": "dataset",
            "name": str((doc or {}).get("name", "")),
            "owner": str((doc or {}).get("owner", "")),
        })
        with self._lock:
            record = self._validate_dataset(doc)
            self._check_name_free(record["name"], "dataset", None)
            record["id"] = self._allocate_id("ds")
            record["version"] = 1
            record["superseded_by"] = None
            record["created_at"] = format_rfc3339(self.clock())
            self._persist(record)
            self._artifacts[record["id"]] = record
            return record["id"]

    def update_artifact(self, artifact_id: str, doc: Mapping, subject) -> str:
        """Versioned replace: the old artifact stays readable and points at
        its successor; the successor starts a fresh id with version + 1."""
        with self._lock:
            old = self._artifacts.get(artifact_id)
            if old is None:
                raise NotFound(f"no artifact {artifact_id!r}")
            if old.get("superseded_by") is not None:
                raise InUse(f"{artifact_id} is already superseded by "
                            f"{old['superseded_by']}")
            if old["class"] == "function":
                action, prefix = ACTION_REGISTER_FUNCTION, "fn"
                self.authorize(subject, action, {"kind": "function",
                                                 "name": old["name"],
                                                 "owner": old["owner"]})
                record = self._validate_function(doc)
            else:
                action, prefix = ACTION_REGISTER_DATASET, "ds"
                self.authorize(subject, action, {"kind": "dataset",
                                                 "name": old["name"],
                                                 "owner": old["owner"]})
                record = self._validate_dataset(doc)
            if record["name"] != old["name"]:
                kind = record.get("kind") if record["class"] == "function" else None
                self._check_name_free(record["name"], record["class"], kind)
            record["id"] = self._allocate_id(prefix)
            record["version"] = old["version"] + 1
            record["supersedes"] = artifact_id
            record["superseded_by"] = None
            record["created_at"] = format_rfc3339(self.clock())
            self._persist(record)
            self._artifacts[record["id"]] = record
            old["superseded_by"] = record["id"]
            self._persist(old)
            return record["id"]

    def list_artifacts(self, subject, kind: str | None = None,
                       name_substring: str | None = None) -> list[dict]:
        self.authorize(subject, ACTION_LIST, {"kind": kind or ""})
        with self._lock:
            out = []
            for artifact_id in sorted(self._artifacts):
                rec = self._artifacts[artifact_id]
                if kind == "dataset" and rec["class"] != "dataset":
                    continue
                if kind in FUNCTION_KINDS and rec.get("kind") != kind:
                    continue
                if name_substring and name_substring not in rec["name"]:
                    continue
                out.append(json.loads(json.dumps(rec)))
            return out

    def delete_artifact(self, artifact_id: str, subject) -> dict:
        with self._lock:
            rec = self._artifacts.get(artifact_id)
            if rec is None:
                raise NotFound(f"no artifact {artifact_id!r}")
            self.authorize(subject, ACTION_DELETE, {
                "kind": rec["class"], "name": rec["name"], "owner": rec["owner"],
            })
            if rec["class"] == "function":
                for other in self._artifacts.values():
                    if (other["class"] == "dataset"
                            and artifact_id in other.get("ingest_chain", [])):
                        raise InUse(f"{artifact_id} is referenced by dataset "
                                    f"{other['id']}")
            del self._artifacts[artifact_id]
            kind_dir = "dataset" if artifact_id.startswith("ds-") else "function"
            path = self.base / kind_dir / f"{artifact_id}.json"
            if path.exists():
                path.unlink()
            self._write_json(self.base / "index.json", {
                "next": dict(self._next),
                "ids": sorted(self._artifacts.keys()),
            })
            if rec["class"] == "dataset" and self.on_dataset_deleted is not None:
                self.on_dataset_deleted(artifact_id)
            return {"removed": artifact_id}
