"""Workbench facade: configuration, authentication, authorization, runs.

Every externally reachable operation funnels through this module, which is
the single place access control happens. Callers present a bearer token;
an unknown token fails before any attribute rule is consulted. Policy runs
execute on a worker pool and their result documents are persisted as
canonical JSON, so re-reading a run returns byte-identical output.
"""
from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from . import metasim
from .abac import AbacRule, SubjectAttrs, evaluate, load_policy_file
from .cleaning import CleaningEngine, load_lexicon_dir, load_rule_pack
from .errors import (AccessDenied, NotFound, UnknownRun, UnknownToken,
                     ValidationFailure)
from .jsonutil import canonical_bytes, canonical_dumps, format_rfc3339, utc_now
from .pipeline import (BUILTIN_ANALYTIC, BUILTIN_INGEST, Pipeline,
                       SentimentLexicon, load_sentiment_lexicon)
from .registry import Registry

ACTIONS = (
    "register_function", "register_dataset", "delete_artifact", "list",
    "ingest", "push", "apply_analytic", "find_records", "erase_subject",
    "enforce_retention", "run_policy", "read_results",
)

RUN_STATES = ("pending", "running", "done", "failed")


@dataclass
class RunHandle:
    run_id: str
    status: str
    seed: int
    submitted_at: str
    error: dict | None = None

    def to_doc(self) -> dict:
        doc = {"run_id": self.run_id, "status": self.status, "seed": self.seed,
               "submitted_at": self.submitted_at}
        if self.error is not None:
            doc["error"] = self.error
        return doc


class RunManager:
    """Executes policy trees asynchronously and persists their results.

    The run id is a content hash of (tree, seed), so resubmitting the same
    request is idempotent and results can be served straight from disk.
    """

    def __init__(self, state_dir, pool_size: int = 2, run_workers: int = 1,
                 clock=utc_now):
        self.base = Path(state_dir) / "runs"
        self.run_workers = run_workers
        self.clock = clock
        self._pool = ThreadPoolExecutor(max_workers=max(1, pool_size))
        self._handles: dict[str, RunHandle] = {}
        self._lock = threading.Lock()
        self._rehydrate()

    def _rehydrate(self) -> None:
        if not self.base.exists():
            return
        for path in sorted(self.base.glob("*.json")):
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
            run_id = path.stem
            self._handles[run_id] = RunHandle(
                run_id=run_id, status="done", seed=doc.get("seed", 0),
                submitted_at="")

    def _result_path(self, run_id: str) -> Path:
        return self.base / f"{run_id}.json"

    def submit(self, tree_doc: Mapping, seed: int) -> RunHandle:
        tree = metasim.load_tree(dict(tree_doc))
        metasim.validate_tree(tree)
        run_id = metasim_run_id(tree_doc, seed)
        with self._lock:
            existing = self._handles.get(run_id)
            if existing is not None:
                return existing
            handle = RunHandle(run_id=run_id, status="pending", seed=seed,
                               submitted_at=format_rfc3339(self.clock()))
            self._handles[run_id] = handle
        self._pool.submit(self._execute, handle, tree)
        return handle

    def _execute(self, handle: RunHandle, tree) -> None:
        handle.status = "running"
        try:
            result = metasim.execute(tree, handle.seed,
                                     max_workers=self.run_workers)
            payload = canonical_bytes(result)
            self.base.mkdir(parents=True, exist_ok=True)
            tmp = self._result_path(handle.run_id).with_suffix(".tmp")
            with open(tmp, "wb") as fh:
                fh.write(payload)
            tmp.replace(self._result_path(handle.run_id))
            handle.status = "done"
        except Exception as exc:  # a failed run is reported, not raised
            handle.error = {"message": str(exc),
                            "type": type(exc).__name__}
            handle.status = "failed"

    def handle(self, run_id: str) -> RunHandle:
        with self._lock:
            handle = self._handles.get(run_id)
        if handle is None:
            raise UnknownRun(f"no run {run_id!r}")
        return handle

    def results_bytes(self, run_id: str) -> bytes:
        handle = self.handle(run_id)
        if handle.status != "done":
            raise NotFound(f"run {run_id} has no results yet "
                           f"(status: {handle.status})")
        with open(self._result_path(run_id), "rb") as fh:
            return fh.read()

    def wait(self, run_id: str, timeout: float = 300.0) -> RunHandle:
        import time
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            handle = self.handle(run_id)
            if handle.status in ("done", "failed"):
                return handle
            time.sleep(0.02)
        return self.handle(run_id)

    def shutdown(self) -> None:
        self._pool.shutdown(wait=True)


def metasim_run_id(tree_doc: Mapping, seed: int) -> str:
    import hashlib
    key = canonical_dumps({"seed": seed, "tree": tree_doc})
    return hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]


class Workbench:
    """Ties registry, pipeline, and run manager behind one access gate."""

    def __init__(self, state_dir, tokens: Mapping[str, SubjectAttrs],
                 policy_rules: list[AbacRule],
                 cleaning: CleaningEngine | None = None,
                 sentiment: SentimentLexicon | None = None,
                 clock=utc_now, pool_size: int = 2, run_workers: int = 1):
        self.state_dir = Path(state_dir)
        self.tokens = dict(tokens)
        self.policy_rules = list(policy_rules)
        cleaning = cleaning or CleaningEngine()
        sentiment = sentiment or SentimentLexicon(scores={},
                                                  negators=frozenset())
        self.registry = Registry(
            self.state_dir, self._authorize,
            {"ingest": BUILTIN_INGEST, "analytic": BUILTIN_ANALYTIC},
            clock=clock)
        self.pipeline = Pipeline(self.registry, self.state_dir, cleaning,
                                 sentiment, clock=clock)
        self.registry.param_validator = self.pipeline.validate_params
        self.registry.on_dataset_deleted = self.pipeline.drop_dataset
        self.runs = RunManager(self.state_dir, pool_size=pool_size,
                               run_workers=run_workers, clock=clock)

    # -- auth ----------------------------------------------------------------

    def authenticate(self, token: str | None) -> SubjectAttrs:
        subject = self.tokens.get(token or "")
        if subject is None:
            raise UnknownToken("unknown or missing bearer token")
        return subject

    def _authorize(self, subject: SubjectAttrs, action: str,
                   resource_attrs: Mapping) -> None:
        decision = evaluate(subject, action, resource_attrs, self.policy_rules)
        if not decision.permitted:
            raise AccessDenied(
                f"{subject.subject_id} may not {action}",
                rule=decision.matched_rule)

    def _dataset_attrs(self, dataset_id: str) -> dict:
        doc = self.registry.get_dataset(dataset_id)
        return {"kind": "dataset", "id": dataset_id, "name": doc["name"],
                "owner": doc["owner"]}

    # -- registry operations (authorization happens inside the registry) ----

    def register_function(self, token, doc) -> dict:
        subject = self.authenticate(token)
        return {"id": self.registry.register_function(doc, subject)}

    def register_dataset(self, token, doc) -> dict:
        subject = self.authenticate(token)
        return {"id": self.registry.register_dataset(doc, subject)}

    def list_artifacts(self, token, kind: str | None = None,
                       name: str | None = None) -> list[dict]:
        subject = self.authenticate(token)
        if kind not in (None, "", "dataset", "ingest", "analytic"):
            raise ValidationFailure(
                "kind must be dataset, ingest, or analytic", field="kind")
        return self.registry.list_artifacts(subject, kind=kind or None,
                                            name_substring=name or None)

    def delete_artifact(self, token, artifact_id: str) -> dict:
        subject = self.authenticate(token)
        return self.registry.delete_artifact(artifact_id, subject)

    # -- data operations -----------------------------------------------------

    def ingest(self, token, dataset_id: str, payload) -> dict:
        subject = self.authenticate(token)
        self._authorize(subject, "ingest", self._dataset_attrs(dataset_id))
        return self.pipeline.ingest_at_rest(dataset_id, payload).to_doc()

    def push(self, token, dataset_id: str, record_doc) -> dict:
        subject = self.authenticate(token)
        self._authorize(subject, "push", self._dataset_attrs(dataset_id))
        return self.pipeline.push_stream(dataset_id, record_doc)

    def apply_analytic(self, token, function_id: str, dataset_id: str,
                       params=None) -> dict:
        subject = self.authenticate(token)
        attrs = self._dataset_attrs(dataset_id)
        attrs["function"] = function_id
        self._authorize(subject, "apply_analytic", attrs)
        return self.pipeline.apply_analytic(function_id, dataset_id, params)

    def find_records(self, token, dataset_id: str, field: str, value) -> dict:
        subject = self.authenticate(token)
        self._authorize(subject, "find_records",
                        self._dataset_attrs(dataset_id))
        records = self.pipeline.find_records(dataset_id, field, value)
        return {"count": len(records), "records": records}

    def erase_subject(self, token, dataset_id: str, field: str, value,
                      mode: str = "delete") -> dict:
        subject = self.authenticate(token)
        self._authorize(subject, "erase_subject",
                        self._dataset_attrs(dataset_id))
        return self.pipeline.erase_subject(dataset_id, field, value, mode)

    def enforce_retention(self, token) -> dict:
        subject = self.authenticate(token)
        self._authorize(subject, "enforce_retention", {"kind": "retention"})
        return self.pipeline.enforce_retention()

    # -- policy runs -----------------------------------------------------------

    def run_policy(self, token, tree_doc, seed: int = 0) -> dict:
        subject = self.authenticate(token)
        self._authorize(subject, "run_policy", {"kind": "policy_run"})
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ValidationFailure("seed must be an integer", field="seed")
        return self.runs.submit(tree_doc, seed).to_doc()

    def run_status(self, token, run_id: str) -> dict:
        subject = self.authenticate(token)
        self._authorize(subject, "read_results",
                        {"kind": "policy_run", "id": run_id})
        return self.runs.handle(run_id).to_doc()

    def run_results(self, token, run_id: str) -> bytes:
        subject = self.authenticate(token)
        self._authorize(subject, "read_results",
                        {"kind": "policy_run", "id": run_id})
        return self.runs.results_bytes(run_id)

    def close(self) -> None:
        self.runs.shutdown()


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def load_tokens_file(path) -> dict[str, SubjectAttrs]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    entries = doc["tokens"] if isinstance(doc, dict) else doc
    tokens: dict[str, SubjectAttrs] = {}
    for i, entry in enumerate(entries):
        token = entry.get("token")
        subject_id = entry.get("subject_id")
        if not isinstance(token, str) or not isinstance(subject_id, str):
            raise ValidationFailure(
                f"tokens[{i}] needs token and subject_id strings",
                field=f"tokens[{i}]")
        tokens[token] = SubjectAttrs(subject_id=subject_id,
                                     attributes=dict(entry.get("attributes",
                                                               {})))
    return tokens


def load_workbench(config_path) -> Workbench:
    """Build a Workbench from a server config file.

    Relative paths in the config resolve against the config file's own
    directory, so a checked-in config tree works from any working directory.
    """
    config_path = Path(config_path)
    with open(config_path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    base = config_path.parent

    def resolve(key, default=None):
        raw = cfg.get(key, default)
        if raw is None:
            return None
        path = Path(raw)
        return path if path.is_absolute() else base / path

    state_dir = resolve("state_dir", "../state")
    tokens = load_tokens_file(resolve("tokens_file", "tokens.json"))
    policy_rules = load_policy_file(resolve("access_policy", "abac.json"))
    sentiment_path = resolve("sentiment_lexicon")
    sentiment = (load_sentiment_lexicon(sentiment_path)
                 if sentiment_path and sentiment_path.exists() else None)
    lexicon_dir = resolve("domain_lexicon_dir")
    lexicons = (load_lexicon_dir(lexicon_dir)
                if lexicon_dir and lexicon_dir.exists() else {})
    packs_dir = resolve("rule_pack_dir")
    rule_packs = {}
    if packs_dir and packs_dir.exists():
        for path in sorted(packs_dir.glob("*.json")):
            rule_packs[path.stem] = load_rule_pack(path)
    cleaning = CleaningEngine(lexicons=lexicons, rule_packs=rule_packs)
    return Workbench(
        state_dir=state_dir, tokens=tokens, policy_rules=policy_rules,
        cleaning=cleaning, sentiment=sentiment,
        pool_size=int(cfg.get("run_pool_size", 2)),
        run_workers=int(cfg.get("run_workers", 1)))
