"""HTTP surface: thin adapters from endpoints to engine operations.

Responses are the canonical JSON documents (same bytes as the file format);
run events stream as Server-Sent Events with id = seq for resume.
"""

from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Any, Iterator

from fastapi import FastAPI, Request
from fastapi.responses import Response, StreamingResponse

from .engine import Engine, build_engine
from .errors import (
    ConflictError,
    EmptyPoolError,
    EmptyTextError,
    GatewayTimeoutError,
    IndexMismatchError,
    InvalidExpressionError,
    InvalidTimezoneError,
    MalformedResponseError,
    NlflowError,
    ParseError,
    ProviderUnavailableError,
    StageError,
    UnknownIdError,
    ValidationFailedError,
)
from .executor import TERMINAL_EVENT_KINDS
from .model import DataSource, SourceKind, to_doc, canonical_bytes
from .planner import Feedback, FeedbackKind

STREAM_IDLE_TIMEOUT = 60.0


def _status_for(exc: NlflowError) -> int:
    if isinstance(exc, (ParseError, ValidationFailedError)):
        return 400
    if isinstance(exc, UnknownIdError):
        return 404
    if isinstance(exc, ConflictError):
        return 409
    if isinstance(
        exc,
        (
            StageError,
            ProviderUnavailableError,
            MalformedResponseError,
            GatewayTimeoutError,
            InvalidExpressionError,
            InvalidTimezoneError,
            EmptyTextError,
            EmptyPoolError,
            IndexMismatchError,
        ),
    ):
        return 422
    return 500


def _error_body(exc: NlflowError) -> bytes:
    details: Any = exc.details
    if isinstance(exc, ValidationFailedError) and exc.report is not None:
        details = exc.report.to_doc()
    return canonical_bytes({"code": exc.code, "details": details, "message": exc.message})


def _canonical(doc: Any, status: int = 200) -> Response:
    return Response(content=canonical_bytes(doc), media_type="application/json", status_code=status)


async def _json_body(request: Request) -> dict[str, Any]:
    raw = await request.body()
    try:
        doc = json.loads(raw or b"{}")
    except json.JSONDecodeError as exc:
        raise ParseError(f"$: request body is not JSON: {exc.msg}", path="$") from None
    if not isinstance(doc, dict):
        raise ParseError("$: request body must be a JSON object", path="$")
    return doc


def _parse_source(doc: Any) -> DataSource:
    if not isinstance(doc, dict):
        raise ParseError("$.source: expected object", path="$.source")
    kind = doc.get("kind")
    if kind == SourceKind.STEP_OUTPUT.value:
        index = doc.get("step_index")
        if not isinstance(index, int):
            raise ParseError("$.source.step_index: expected integer", path="$.source.step_index")
        return DataSource.step_output(index)
    if kind in (SourceKind.FILE.value, SourceKind.URL.value, SourceKind.DATABASE.value):
        ref = doc.get("ref")
        if not isinstance(ref, str) or not ref:
            raise ParseError("$.source.ref: expected non-empty string", path="$.source.ref")
        return DataSource(SourceKind(kind), ref=ref)
    raise ParseError(
        f"$.source.kind: expected file|url|database|step_output, got {kind!r}",
        path="$.source.kind",
    )


def create_app(engine: Engine | None = None, data_dir: Path | str | None = None) -> FastAPI:
    if engine is None:
        engine = build_engine(data_dir or ".nlflow-data")
    app = FastAPI(title="nlflow", docs_url=None, redoc_url=None)
    app.state.engine = engine

    @app.exception_handler(NlflowError)
    async def _handle(request: Request, exc: NlflowError) -> Response:
        return Response(
            content=_error_body(exc), media_type="application/json", status_code=_status_for(exc)
        )

    # -- suggestions ----------------------------------------------------------

    @app.post("/suggestions")
    async def post_suggestion(request: Request) -> Response:
        body = await _json_body(request)
        prompt = body.get("prompt")
        if not isinstance(prompt, str) or not prompt.strip():
            raise ParseError("$.prompt: expected non-empty string", path="$.prompt")
        suggestion = engine.suggestions.suggest(prompt)
        return _canonical(suggestion.to_doc())

    @app.post("/suggestions/{suggestion_id}/apply")
    async def apply_suggestion(suggestion_id: str) -> Response:
        workflow = engine.suggestions.apply(suggestion_id)
        return _canonical(to_doc(workflow))

    @app.post("/suggestions/{suggestion_id}/reject")
    async def reject_suggestion(suggestion_id: str, request: Request) -> Response:
        body = await _json_body(request)
        new_prompt = body.get("prompt")
        replacement = engine.suggestions.reject(suggestion_id, new_prompt)
        return _canonical(replacement.to_doc() if replacement else None)

    # -- workflows --------------------------------------------------------------

    @app.get("/workflows")
    async def list_workflows() -> Response:
        return _canonical([to_doc(w) for w in engine.list_workflows()])

    @app.post("/workflows")
    async def import_workflow(request: Request) -> Response:
        workflow = engine.import_workflow(await request.body())
        return _canonical(to_doc(workflow))

    @app.get("/workflows/{workflow_id}")
    async def get_workflow(workflow_id: str) -> Response:
        return Response(content=engine.workflow_bytes(workflow_id), media_type="application/json")

    @app.delete("/workflows/{workflow_id}")
    async def delete_workflow(workflow_id: str) -> Response:
        engine.delete_workflow(workflow_id)
        return _canonical({"deleted": workflow_id})

    @app.patch("/workflows/{workflow_id}/steps")
    async def patch_steps(workflow_id: str, request: Request) -> Response:
        body = await _json_body(request)
        workflow = engine.patch_steps(workflow_id, body)
        return _canonical(to_doc(workflow))

    @app.get("/workflows/{workflow_id}/steps/{step_index}/candidates")
    async def step_candidates(workflow_id: str, step_index: int, k: int = 10) -> Response:
        candidates = engine.step_candidates(workflow_id, step_index, k=k)
        return _canonical(
            {
                "candidates": [
                    {"action_id": c.action_id, "similarity": c.similarity}
                    for c in candidates.candidates
                ],
                "step_index": candidates.step_index,
            }
        )

    @app.post("/workflows/{workflow_id}/data")
    async def attach_data(workflow_id: str, request: Request) -> Response:
        body = await _json_body(request)
        step = body.get("step")
        label = body.get("label")
        if not isinstance(step, int):
            raise ParseError("$.step: expected integer", path="$.step")
        if not isinstance(label, str) or not label:
            raise ParseError("$.label: expected non-empty string", path="$.label")
        source = _parse_source(body.get("source"))
        workflow = engine.attach_data(workflow_id, step, label, source)
        return _canonical(to_doc(workflow))

    @app.post("/workflows/{workflow_id}/refine")
    async def refine(workflow_id: str, request: Request) -> Response:
        body = await _json_body(request)
        if body.get("approve") is True:
            feedback = Feedback(kind=FeedbackKind.APPROVE, text=str(body.get("feedback", "")))
        else:
            text = body.get("feedback")
            if not isinstance(text, str) or not text.strip():
                raise ParseError("$.feedback: expected non-empty string", path="$.feedback")
            feedback = Feedback(kind=FeedbackKind.MODIFY, text=text)
        workflow = engine.refine_workflow(workflow_id, feedback)
        return _canonical(to_doc(workflow))

    @app.post("/workflows/{workflow_id}/schedule")
    async def schedule(workflow_id: str, request: Request) -> Response:
        body = await _json_body(request)
        expression = body.get("expression")
        tz = body.get("timezone")
        if not isinstance(expression, str) or not expression:
            raise ParseError("$.expression: expected non-empty string", path="$.expression")
        if not isinstance(tz, str) or not tz:
            raise ParseError("$.timezone: expected non-empty string", path="$.timezone")
        workflow = engine.scheduler.schedule(workflow_id, expression, tz)
        return _canonical(to_doc(workflow))

    @app.delete("/workflows/{workflow_id}/schedule")
    async def unschedule(workflow_id: str) -> Response:
        workflow = engine.scheduler.unschedule(workflow_id)
        return _canonical(to_doc(workflow))

    @app.post("/workflows/{workflow_id}/run")
    async def run_workflow(workflow_id: str, wait: bool = False) -> Response:
        run = engine.run_workflow(workflow_id, background=not wait)
        return _canonical(engine.get_run(run.id))

    # -- runs ---------------------------------------------------------------------

    @app.get("/runs/{run_id}")
    async def get_run(run_id: str) -> Response:
        return _canonical(engine.get_run(run_id))

    @app.get("/runs/{run_id}/events")
    async def run_events(run_id: str, request: Request, last_event_id: int | None = None) -> Response:
        engine.get_run(run_id)  # 404 for unknown runs
        header = request.headers.get("last-event-id")
        after = last_event_id if last_event_id is not None else -1
        if header is not None:
            try:
                after = int(header)
            except ValueError:
                after = -1

        def stream() -> Iterator[bytes]:
            last = after
            idle_started = time.monotonic()
            while True:
                log = engine.executor.events(run_id)
                for event in log:
                    if event.seq <= last:
                        continue
                    last = event.seq
                    idle_started = time.monotonic()
                    chunk = (
                        f"event: {event.kind.value}\n"
                        f"id: {event.seq}\n"
                        f"data: {event.to_line()}\n\n"
                    )
                    yield chunk.encode("utf-8")
                # The run is over once the log holds a terminal event; pending
                # events were flushed above, so the stream can close.
                if any(e.kind in TERMINAL_EVENT_KINDS for e in log):
                    return
                if time.monotonic() - idle_started > STREAM_IDLE_TIMEOUT:
                    return
                time.sleep(0.05)

        return StreamingResponse(
            stream(),
            media_type="text/event-stream",
            headers={"Cache-Control": "no-cache", "X-Accel-Buffering": "no"},
        )

    # -- actions ---------------------------------------------------------------------

    @app.get("/actions")
    async def list_actions() -> Response:
        return _canonical(engine.list_actions())

    @app.post("/actions")
    async def add_action(request: Request) -> Response:
        body = await _json_body(request)
        return _canonical(engine.add_action(body))

    # -- static builder UI (if built) ---------------------------------------------

    ui_dist = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"
    if ui_dist.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dist), html=True), name="ui")

    return app
