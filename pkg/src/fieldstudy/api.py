"""HTTP+JSON surface of the study server.

Requests may carry ``now_ms`` (logical time, used by simulations and tests);
without it the server stamps wall clock. Errors are ``{code, message}``
bodies with 4xx statuses.
"""

from __future__ import annotations

import time
from typing import Any

from fastapi import Body, FastAPI, Query, Request
from fastapi.responses import JSONResponse

from fieldstudy.errors import StudyError
from fieldstudy.service import StudyService

_NOT_FOUND = {"unknown_installation", "unknown_study", "unknown_assignment", "unknown_kind"}
_CONFLICT = {"wrong_state", "outside_window", "duplicate_task", "window_past"}


def _status_for(code: str) -> int:
    if code in _NOT_FOUND:
        return 404
    if code in _CONFLICT:
        return 409
    return 400


def _now(payload_now: int | None) -> int:
    return payload_now if payload_now is not None else int(time.time() * 1000)


def create_app(service: StudyService) -> FastAPI:
    app = FastAPI(title="fieldstudy", docs_url=None, redoc_url=None)

    @app.exception_handler(StudyError)
    async def study_error_handler(_request: Request, exc: StudyError):
        return JSONResponse(status_code=_status_for(exc.code),
                            content={"code": exc.code, "message": exc.message})

    @app.post("/v1/installations")
    def register(body: dict[str, Any] = Body(...)):
        return service.register_installation(
            body.get("installation_id", ""),
            body.get("study_id", service.config.study_id),
            _now(body.get("now_ms")),
        )

    @app.post("/v1/batches")
    def ingest(body: dict[str, Any] = Body(...)):
        return service.ingest_batch(body.get("batch", body), _now(body.get("now_ms")))

    @app.get("/v1/installations/{installation_id}/tasks")
    def sync_tasks(installation_id: str, now_ms: int | None = Query(default=None)):
        return service.sync_tasks(installation_id, _now(now_ms))

    @app.post("/v1/installations/{installation_id}/tasks/{task_id}/transition")
    def transition(installation_id: str, task_id: str, body: dict[str, Any] = Body(...)):
        return service.transition_task(
            installation_id, task_id, body.get("verb", ""),
            _now(body.get("now_ms")), body.get("questionnaire"))

    @app.post("/v1/installations/{installation_id}/onboarding")
    def onboarding(installation_id: str, body: dict[str, Any] = Body(...)):
        return service.report_onboarding(
            installation_id, body.get("event", ""), _now(body.get("now_ms")))

    @app.get("/v1/config/{study_id}")
    def get_config(study_id: str):
        return service.get_config(study_id)

    @app.get("/v1/stats")
    def stats():
        return service.store_stats()

    @app.get("/v1/metrics/daily")
    def metrics_daily(from_date: str = Query(alias="from"), to_date: str = Query(alias="to")):
        return {"days": service.metrics_daily(from_date, to_date)}

    @app.get("/v1/metrics/liveness")
    def metrics_liveness(
        now_ms: int | None = Query(default=None),
        stalled_after_ms: int = Query(default=2 * 3_600_000),
        lost_after_ms: int = Query(default=6 * 3_600_000),
    ):
        return {"reports": service.metrics_liveness(_now(now_ms),
                                                    stalled_after_ms, lost_after_ms)}

    @app.get("/v1/correlations")
    def correlations(
        from_ms: int,
        to_ms: int,
        installation_id: str | None = Query(default=None),
        context_window_ms: int = Query(default=3_600_000),
    ):
        return {"rows": service.correlations(installation_id, from_ms, to_ms,
                                             context_window_ms)}

    @app.get("/v1/metrics/gaps")
    def gaps(installation_id: str, kind: str, from_ms: int, to_ms: int):
        return {"gaps": service.collection_gaps(installation_id, kind, from_ms, to_ms)}

    @app.post("/v1/admin/tasks")
    def admin_add_task(body: dict[str, Any] = Body(...)):
        return service.admin_add_task(body.get("task", body), _now(body.get("now_ms")))

    @app.post("/v1/admin/tasks/{task_id}/reschedule")
    def admin_reschedule(task_id: str, body: dict[str, Any] = Body(...)):
        return service.admin_reschedule(
            task_id, body.get("installation_id", ""),
            body["window_start_ms"], body["window_end_ms"], _now(body.get("now_ms")))

    @app.get("/v1/admin/tasks")
    def admin_board():
        return service.admin_task_board()

    return app
