"""Command-line interface.

Runs the same facade the HTTP gateway uses, in process: every gateway
operation has a matching subcommand. Exit status is 0 on success, 1 when the
workbench reports a domain error, and 2 for usage errors.
"""
from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from .errors import WorkbenchError
from .jsonutil import canonical_dumps
from .service import Workbench, load_workbench

DEFAULT_CONFIG = "config/server.json"


class _Ctx:
    def __init__(self, config_path: str, token: str | None, as_json: bool):
        self.config_path = config_path
        self.token = token
        self.as_json = as_json
        self._workbench: Workbench | None = None

    @property
    def workbench(self) -> Workbench:
        if self._workbench is None:
            self._workbench = load_workbench(self.config_path)
        return self._workbench


def client_options(fn):
    """Connection options accepted by every subcommand (and the group)."""

    @click.option("--config", "config_path", default=None,
                  help=f"Server configuration file [default: {DEFAULT_CONFIG}].")
    @click.option("--token", default=None,
                  help="Bearer token (or POLICYLAB_TOKEN).")
    @click.option("--json", "as_json", is_flag=True, default=False,
                  help="Emit machine-readable JSON.")
    @click.pass_obj
    @functools.wraps(fn)
    def wrapper(obj: _Ctx, *args, config_path=None, token=None,
                as_json=False, **kwargs):
        ctx = _Ctx(config_path or obj.config_path, token or obj.token,
                   as_json or obj.as_json)
        ctx._workbench = obj._workbench if ctx.config_path == obj.config_path \
            else None
        return fn(ctx, *args, **kwargs)

    return wrapper


def _read_doc(source: str, what: str = "document"):
    """Read a JSON document from a file path or stdin ('-')."""
    try:
        text = sys.stdin.read() if source == "-" else Path(source).read_text(
            encoding="utf-8")
    except OSError as exc:
        _fail("source_parse_error", f"cannot read {what} {source}: "
                                    f"{exc.strerror}", as_json=False)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        _fail("source_parse_error", f"{source}: not valid JSON ({exc.msg})",
              as_json=False)


def _fail(code: str, message: str, as_json: bool):
    if as_json:
        click.echo(canonical_dumps({"error": {"code": code,
                                              "message": message}}), err=True)
    else:
        click.echo(f"error [{code}]: {message}", err=True)
    sys.exit(1)


def _emit(ctx: _Ctx, doc, human=None) -> None:
    if ctx.as_json or human is None:
        click.echo(canonical_dumps(doc))
    else:
        click.echo(human)


def _call(ctx: _Ctx, fn, *args, **kwargs):
    try:
        return fn(ctx.token, *args, **kwargs)
    except WorkbenchError as exc:
        _fail(exc.code, exc.message, ctx.as_json)


@click.group()
@click.option("--config", "config_path", default=DEFAULT_CONFIG,
              show_default=True, help="Server configuration file.")
@click.option("--token", envvar="POLICYLAB_TOKEN", default=None,
              help="Bearer token (or POLICYLAB_TOKEN).")
@click.option("--json", "as_json", is_flag=True,
              help="Emit machine-readable JSON.")
@click.pass_context
def main(ctx, config_path, token, as_json):
    """Policy analytics workbench."""
    ctx.obj = _Ctx(config_path, token, as_json)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8300, show_default=True, type=int)
@click.pass_obj
def serve(obj: _Ctx, host, port):
    """Start the HTTP gateway."""
    from .gateway import serve as run_server
    run_server(obj.config_path, host=host, port=port)


@main.command("register-function")
@click.argument("spec")
@client_options
def register_function(ctx: _Ctx, spec):
    """Register an ingest or analytic function from a JSON spec file."""
    doc = _read_doc(spec, "function spec")
    out = _call(ctx, ctx.workbench.register_function, doc)
    _emit(ctx, out, f"registered {out['id']}")


@main.command("register-dataset")
@click.argument("spec")
@client_options
def register_dataset(ctx: _Ctx, spec):
    """Register a dataset from a JSON spec file."""
    doc = _read_doc(spec, "dataset spec")
    out = _call(ctx, ctx.workbench.register_dataset, doc)
    _emit(ctx, out, f"registered {out['id']}")


@main.command("list")
@click.option("--kind", type=click.Choice(["dataset", "ingest", "analytic"]),
              default=None)
@click.option("--name", default=None, help="Substring filter on names.")
@client_options
def list_artifacts(ctx: _Ctx, kind, name):
    """List registered artifacts."""
    out = _call(ctx, ctx.workbench.list_artifacts, kind=kind, name=name)
    lines = [f"{a['id']}  {a.get('kind', a['class']):<9} "
             f"{a['name']:<24} v{a['version']}  owner={a['owner']}"
             for a in out]
    _emit(ctx, {"artifacts": out}, "\n".join(lines) if lines else "(none)")


@main.command()
@click.argument("artifact_id")
@client_options
def delete(ctx: _Ctx, artifact_id):
    """Delete an artifact (datasets lose their stored records)."""
    out = _call(ctx, ctx.workbench.delete_artifact, artifact_id)
    _emit(ctx, out, f"removed {out['removed']}")


@main.command()
@click.option("--dataset", "dataset_id", required=True)
@click.option("--file", "source", required=True,
              help="NDJSON batch file, or '-' for stdin.")
@client_options
def ingest(ctx: _Ctx, dataset_id, source):
    """Ingest an NDJSON batch into a dataset."""
    try:
        payload = (sys.stdin.read() if source == "-"
                   else Path(source).read_text(encoding="utf-8"))
    except OSError as exc:
        _fail("source_parse_error",
              f"cannot read batch {source}: {exc.strerror}", ctx.as_json)
    out = _call(ctx, ctx.workbench.ingest, dataset_id, payload)
    _emit(ctx, out,
          f"in={out['records_in']} stored={out['records_stored']} "
          f"dropped={out['records_dropped']} failed={out['records_failed']}")


@main.command()
@click.option("--dataset", "dataset_id", required=True)
@click.option("--record", "record", required=True,
              help="JSON record file, or '-' for stdin.")
@client_options
def push(ctx: _Ctx, dataset_id, record):
    """Push one record to a stream dataset."""
    doc = _read_doc(record, "record")
    out = _call(ctx, ctx.workbench.push, dataset_id, doc)
    human = (f"stored record {out['record_id']}" if out.get("stored")
             else f"not stored ({out.get('reason')})")
    _emit(ctx, out, human)


@main.command()
@click.argument("function_id")
@click.option("--dataset", "dataset_id", required=True)
@click.option("--params", default="{}", help="JSON object of parameters.")
@client_options
def analytics(ctx: _Ctx, function_id, dataset_id, params):
    """Apply an analytic function to a dataset."""
    try:
        params_doc = json.loads(params)
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"--params: not valid JSON ({exc.msg})")
    out = _call(ctx, ctx.workbench.apply_analytic, function_id, dataset_id,
                params_doc)
    _emit(ctx, out, canonical_dumps(out["result"]))


@main.command()
@click.option("--dataset", "dataset_id", required=True)
@click.option("--field", required=True)
@click.option("--value", required=True)
@client_options
def find(ctx: _Ctx, dataset_id, field, value):
    """Find records whose field (or 'annotations.<key>') equals a value."""
    out = _call(ctx, ctx.workbench.find_records, dataset_id, field, value)
    lines = [canonical_dumps(r) for r in out["records"]]
    _emit(ctx, out, "\n".join([f"{out['count']} record(s)"] + lines))


@main.command()
@click.option("--dataset", "dataset_id", required=True)
@click.option("--field", required=True)
@click.option("--value", required=True)
@click.option("--mode", type=click.Choice(["delete", "anonymize"]),
              default="delete", show_default=True)
@client_options
def erase(ctx: _Ctx, dataset_id, field, value, mode):
    """Erase a data subject's records by field match."""
    out = _call(ctx, ctx.workbench.erase_subject, dataset_id, field, value,
                mode)
    _emit(ctx, out, f"{out['records']} record(s) {mode}d")


@main.command()
@client_options
def retention(ctx: _Ctx):
    """Purge records past their dataset's retention window."""
    out = _call(ctx, ctx.workbench.enforce_retention)
    total = sum(out["purged"].values())
    _emit(ctx, out, f"purged {total} record(s); "
                    f"dead letters pruned: {out['dead_letters_pruned']}")


@main.group()
def policy():
    """Submit and inspect policy simulation runs."""


@policy.command("run")
@click.option("--tree", "tree_path", required=True,
              help="Policy tree JSON file, or '-' for stdin.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--wait/--no-wait", default=True, show_default=True,
              help="Block until the run finishes and print its results.")
@client_options
def policy_run(ctx: _Ctx, tree_path, seed, wait):
    """Run a policy tree and print the results document."""
    doc = _read_doc(tree_path, "policy tree")
    out = _call(ctx, ctx.workbench.run_policy, doc, seed)
    if not wait:
        _emit(ctx, out, f"run {out['run_id']}: {out['status']}")
        return
    handle = ctx.workbench.runs.wait(out["run_id"])
    if handle.status != "done":
        error = handle.error or {}
        _fail(error.get("type", "run_failed"),
              error.get("message", f"run ended {handle.status}"), ctx.as_json)
    payload = _call(ctx, ctx.workbench.run_results, handle.run_id)
    click.echo(payload.decode("utf-8"))


@policy.command("status")
@click.argument("run_id")
@client_options
def policy_status(ctx: _Ctx, run_id):
    """Show a run's state."""
    out = _call(ctx, ctx.workbench.run_status, run_id)
    _emit(ctx, out, f"run {out['run_id']}: {out['status']}")


@policy.command("results")
@click.argument("run_id")
@client_options
def policy_results(ctx: _Ctx, run_id):
    """Print a finished run's results document."""
    payload = _call(ctx, ctx.workbench.run_results, run_id)
    click.echo(payload.decode("utf-8"))


@policy.command("ranking")
@click.argument("run_id")
@client_options
def policy_ranking(ctx: _Ctx, run_id):
    """Print a finished run's ranking map per goal."""
    payload = _call(ctx, ctx.workbench.run_results, run_id)
    doc = json.loads(payload)
    out = {"seed": doc["seed"], "goals": [
        {"id": g["id"], "title": g["title"], "ranking": g["ranking"],
         "no_criteria": g["no_criteria"]} for g in doc["goals"]]}
    lines = []
    for goal in out["goals"]:
        lines.append(f"goal {goal['id']}: {goal['title']}")
        for obj_id, proportion in sorted(goal["ranking"].items()):
            lines.append(f"  {obj_id}: {proportion:.3f}")
        if goal["no_criteria"]:
            lines.append("  (no criteria defined)")
    _emit(ctx, out, "\n".join(lines))


if __name__ == "__main__":
    main()
