"""HTTP gateway: a thin FastAPI layer over the Workbench facade.

Every endpoint authenticates the bearer token first (unknown tokens get 401
before any access rule is consulted), then delegates to the facade, which
enforces attribute-based access control. Domain errors map to stable HTTP
statuses via their error code; a denied request names the matching rule.
"""
from __future__ import annotations

from fastapi import FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from .errors import WorkbenchError
from .service import Workbench

API_PREFIX = "/api/v1"

# error code -> HTTP status; codes absent here are treated as server faults
STATUS_BY_CODE = {
    "unknown_token": 401,
    "access_denied": 403,
    "not_found": 404,
    "unknown_run": 404,
    "unknown_dataset": 404,
    "unknown_function": 404,
    "duplicate_name": 409,
    "in_use": 409,
    "wrong_source_kind": 409,
    "validation_failure": 400,
    "malformed_rule": 400,
    "policy_parse_error": 400,
    "source_parse_error": 400,
    "invalid_retention": 400,
    "missing_compliance_doc": 400,
    "invalid_compliance_doc": 400,
    "unknown_builtin": 400,
    "conflicting_rules": 400,
    "unknown_ruleset": 400,
    "structure_error": 422,
    "id_error": 422,
    "criterion_parse_error": 422,
    "criterion_eval_error": 422,
    "unknown_attribute": 422,
    "unknown_parameter": 422,
    "missing_required": 422,
    "invalid_param": 422,
    "infeasible_degree": 422,
    "domain_error": 422,
    "function_failure": 500,
}


class AnalyticRequest(BaseModel):
    params: dict = {}


class RunRequest(BaseModel):
    tree: dict
    seed: int = 0


def _token_of(request: Request) -> str | None:
    header = request.headers.get("authorization", "")
    scheme, _, token = header.partition(" ")
    if scheme.lower() == "bearer" and token.strip():
        return token.strip()
    return None


def create_app(workbench: Workbench) -> FastAPI:
    app = FastAPI(title="policylab", docs_url=None, redoc_url=None,
                  openapi_url=None)
    app.state.workbench = workbench

    @app.exception_handler(WorkbenchError)
    async def on_domain_error(request: Request, exc: WorkbenchError):
        status = STATUS_BY_CODE.get(exc.code, 500)
        return JSONResponse(status_code=status, content={"error": exc.to_doc()})

    @app.exception_handler(RequestValidationError)
    async def on_bad_body(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {"loc": ("body",),
                                                      "msg": "invalid body"}
        field = ".".join(str(part) for part in first.get("loc", ()))
        return JSONResponse(status_code=400, content={"error": {
            "code": "malformed_body", "message": first.get("msg", "invalid"),
            "field": field}})

    wb = workbench

    # -- registry ------------------------------------------------------------

    @app.post(API_PREFIX + "/functions", status_code=201)
    async def register_function(request: Request, doc: dict):
        return wb.register_function(_token_of(request), doc)

    @app.get(API_PREFIX + "/functions")
    async def list_functions(request: Request,
                             kind: str | None = Query(default=None),
                             name: str | None = Query(default=None)):
        artifacts = []
        for want in ([kind] if kind else ["ingest", "analytic"]):
            artifacts.extend(wb.list_artifacts(_token_of(request), kind=want,
                                               name=name))
        artifacts.sort(key=lambda a: a["id"])
        return {"artifacts": artifacts}

    @app.post(API_PREFIX + "/datasets", status_code=201)
    async def register_dataset(request: Request, doc: dict):
        return wb.register_dataset(_token_of(request), doc)

    @app.get(API_PREFIX + "/datasets")
    async def list_datasets(request: Request,
                            name: str | None = Query(default=None)):
        return {"artifacts": wb.list_artifacts(_token_of(request),
                                               kind="dataset", name=name)}

    @app.delete(API_PREFIX + "/artifacts/{artifact_id}")
    async def delete_artifact(request: Request, artifact_id: str):
        return wb.delete_artifact(_token_of(request), artifact_id)

    # -- data ----------------------------------------------------------------

    @app.post(API_PREFIX + "/datasets/{dataset_id}/ingest")
    async def ingest(request: Request, dataset_id: str):
        payload = await request.body()
        return wb.ingest(_token_of(request), dataset_id, payload)

    @app.post(API_PREFIX + "/datasets/{dataset_id}/records", status_code=201)
    async def push_record(request: Request, dataset_id: str, doc: dict):
        return wb.push(_token_of(request), dataset_id, doc)

    @app.get(API_PREFIX + "/datasets/{dataset_id}/records")
    async def find_records(request: Request, dataset_id: str,
                           field: str = Query(...),
                           value: str = Query(...)):
        return wb.find_records(_token_of(request), dataset_id, field, value)

    @app.delete(API_PREFIX + "/datasets/{dataset_id}/subject")
    async def erase_subject(request: Request, dataset_id: str,
                            field: str = Query(...),
                            value: str = Query(...),
                            mode: str = Query(default="delete")):
        return wb.erase_subject(_token_of(request), dataset_id, field, value,
                                mode)

    @app.post(API_PREFIX + "/retention/enforce")
    async def enforce_retention(request: Request):
        return wb.enforce_retention(_token_of(request))

    @app.post(API_PREFIX + "/analytics/{function_id}/apply")
    async def apply_analytic(request: Request, function_id: str,
                             dataset: str = Query(...),
                             body: AnalyticRequest | None = None):
        params = body.params if body is not None else {}
        return wb.apply_analytic(_token_of(request), function_id, dataset,
                                 params)

    # -- policy runs ----------------------------------------------------------

    @app.post(API_PREFIX + "/policies/runs", status_code=202)
    async def run_policy(request: Request, body: RunRequest):
        return wb.run_policy(_token_of(request), body.tree, body.seed)

    @app.get(API_PREFIX + "/policies/runs/{run_id}")
    async def run_status(request: Request, run_id: str):
        return wb.run_status(_token_of(request), run_id)

    @app.get(API_PREFIX + "/policies/runs/{run_id}/results")
    async def run_results(request: Request, run_id: str):
        payload = wb.run_results(_token_of(request), run_id)
        # stored canonical bytes are returned untouched so repeated reads
        # are byte-identical
        return Response(content=payload, media_type="application/json")

    @app.get(API_PREFIX + "/policies/runs/{run_id}/ranking")
    async def run_ranking(request: Request, run_id: str):
        import json as _json
        doc = _json.loads(wb.run_results(_token_of(request), run_id))
        return {"seed": doc["seed"], "goals": [
            {"id": goal["id"], "title": goal["title"],
             "ranking": goal["ranking"], "no_criteria": goal["no_criteria"]}
            for goal in doc["goals"]]}

    return app


def serve(config_path, host: str = "127.0.0.1", port: int = 8300) -> None:
    import uvicorn

    from .service import load_workbench
    app = create_app(load_workbench(config_path))
    uvicorn.run(app, host=host, port=port, log_level="warning")
