"""Sequential workflow execution with a totally ordered per-run event stream.

One run walks its steps strictly in index order, fails fast on the first
step error, and appends every event to the run's log before anything else
observes it. Builtins are deterministic so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Callable

from .actions import ActionPool
from .errors import ConcurrentRunError, ExecutorFailure, NotReadyError, UnknownIdError
from .model import (
    OutputKind,
    ParamKind,
    ParamValue,
    RULE_NOT_RESOLVED,
    Step,
    StepOutput,
    ValidationReport,
    Violation,
    Workflow,
    WorkflowStatus,
    new_id,
    utcnow,
    validate,
    with_step,
)
from .store import FileStore


class RunStatus(str, Enum):
    RUNNING = "running"
    SUCCEEDED = "succeeded"
    FAILED = "failed"


class RunEventKind(str, Enum):
    RUN_STARTED = "run_started"
    STEP_STARTED = "step_started"
    STEP_COMPLETED = "step_completed"
    STEP_FAILED = "step_failed"
    RUN_COMPLETED = "run_completed"
    RUN_FAILED = "run_failed"

TERMINAL_EVENT_KINDS = (RunEventKind.RUN_COMPLETED, RunEventKind.RUN_FAILED)


@dataclass(frozen=True)
class RunEvent:
    run_id: str
    seq: int
    kind: RunEventKind
    step_index: int | None = None
    payload: str = ""
    at: datetime = field(default_factory=utcnow)

    def to_doc(self) -> dict[str, Any]:
        return {
            "at": self.at.isoformat(),
            "kind": self.kind.value,
            "payload": self.payload,
            "run_id": self.run_id,
            "seq": self.seq,
            "step_index": self.step_index,
        }

    def to_line(self) -> str:
        return json.dumps(self.to_doc(), sort_keys=True, ensure_ascii=False)


def event_from_doc(doc: dict[str, Any]) -> RunEvent:
    return RunEvent(
        run_id=doc["run_id"],
        seq=doc["seq"],
        kind=RunEventKind(doc["kind"]),
        step_index=doc["step_index"],
        payload=doc["payload"],
        at=datetime.fromisoformat(doc["at"]),
    )


@dataclass(frozen=True)
class Run:
    id: str
    workflow_id: str
    status: RunStatus
    started_at: datetime
    ended_at: datetime | None = None
    step_results: tuple[StepOutput, ...] = ()

    def to_doc(self) -> dict[str, Any]:
        return {
            "ended_at": self.ended_at.isoformat() if self.ended_at else None,
            "id": self.id,
            "started_at": self.started_at.isoformat(),
            "status": self.status.value,
            "step_results": [
                {
                    "kind": o.kind.value,
                    "produced_at": o.produced_at.isoformat(),
                    "step_index": o.step_index,
                    "value_ref": o.value_ref,
                }
                for o in self.step_results
            ],
            "workflow_id": self.workflow_id,
        }


def run_from_doc(doc: dict[str, Any]) -> Run:
    return Run(
        id=doc["id"],
        workflow_id=doc["workflow_id"],
        status=RunStatus(doc["status"]),
        started_at=datetime.fromisoformat(doc["started_at"]),
        ended_at=datetime.fromisoformat(doc["ended_at"]) if doc["ended_at"] else None,
        step_results=tuple(
            StepOutput(
                step_index=o["step_index"],
                kind=OutputKind(o["kind"]),
                value_ref=o["value_ref"],
                produced_at=datetime.fromisoformat(o["produced_at"]),
            )
            for o in doc["step_results"]
        ),
    )


# ---------------------------------------------------------------------------
# Step values and builtins


@dataclass(frozen=True)
class StepValue:
    kind: OutputKind
    value: Any  # text/url: str; table: list[dict]; file: (filename, bytes)


@dataclass
class StepContext:
    store: FileStore
    run_id: str
    step_index: int
    seq: int  # seq of the step_started event, used for outbox naming


def _as_text(value: Any) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, list):
        return json.dumps(value, sort_keys=True, ensure_ascii=False, indent=2)
    if isinstance(value, Path):
        return value.read_text(encoding="utf-8")
    raise ExecutorFailure(f"cannot interpret {type(value).__name__} as text")


def _parse_rows(text: str, suffix: str) -> list[dict]:
    if suffix == ".json" or text.lstrip().startswith("["):
        rows = json.loads(text)
        if not isinstance(rows, list):
            raise ExecutorFailure("table JSON must be an array of objects")
        return rows
    reader = csv.DictReader(io.StringIO(text))
    return [dict(row) for row in reader]


def _as_rows(value: Any) -> list[dict]:
    if isinstance(value, list):
        return value
    if isinstance(value, Path):
        if not value.exists():
            raise ExecutorFailure(f"table source not found: {value}")
        return _parse_rows(value.read_text(encoding="utf-8"), value.suffix.lower())
    if isinstance(value, str):
        return _parse_rows(value, "")
    raise ExecutorFailure(f"cannot interpret {type(value).__name__} as a table")


def _first_param(params: dict[str, Any]) -> Any:
    if not params:
        raise ExecutorFailure("no input parameter bound")
    return params[sorted(params)[0]]


def builtin_echo(params: dict[str, Any], ctx: StepContext) -> StepValue:
    return StepValue(OutputKind.TEXT, _as_text(params.get("text", _first_param(params))))


def builtin_fetch_url(params: dict[str, Any], ctx: StepContext) -> StepValue:
    ref = params.get("url", None) or _first_param(params)
    if isinstance(ref, Path):
        return StepValue(OutputKind.FILE, (ref.name, ref.read_bytes()))
    ref = str(ref)
    if ref.startswith("http://") or ref.startswith("https://"):
        import httpx

        response = httpx.get(ref, timeout=30.0)
        response.raise_for_status()
        name = ref.rstrip("/").rsplit("/", 1)[-1] or "download.bin"
        return StepValue(OutputKind.FILE, (name, response.content))
    path = Path(ref)
    if not path.exists():
        raise ExecutorFailure(f"cannot fetch {ref!r}")
    return StepValue(OutputKind.FILE, (path.name, path.read_bytes()))


def builtin_read_table(params: dict[str, Any], ctx: StepContext) -> StepValue:
    return StepValue(OutputKind.TABLE, _as_rows(_first_param(params)))


def builtin_review_images(params: dict[str, Any], ctx: StepContext) -> StepValue:
    """Load the linked list of image URLs into a reviewable table."""
    return StepValue(OutputKind.TABLE, _as_rows(_first_param(params)))


def builtin_detect_people(params: dict[str, Any], ctx: StepContext) -> StepValue:
    """Deterministic stand-in for a person detector.

    A row is flagged "O" when any cell mentions a person-like token,
    otherwise "X". Real model integration is a configuration concern.
    """
    rows = _as_rows(_first_param(params))
    markers = ("person", "people", "portrait", "face", "human", "crowd")
    out = []
    for row in rows:
        text = " ".join(str(v).lower() for v in row.values())
        flag = "O" if any(m in text for m in markers) else "X"
        out.append({**row, "flag": flag})
    return StepValue(OutputKind.TABLE, out)


def builtin_filter_table(params: dict[str, Any], ctx: StepContext) -> StepValue:
    rows = _as_rows(params.get("table", None) or _first_param(params))
    predicate = str(params.get("predicate", ""))
    if not predicate:
        return StepValue(OutputKind.TABLE, rows)
    for op in ("!=", "=", " contains "):
        if op in predicate:
            column, needle = predicate.split(op, 1)
            column, needle = column.strip(), needle.strip()
            if op == "=":
                keep = lambda r: str(r.get(column, "")) == needle
            elif op == "!=":
                keep = lambda r: str(r.get(column, "")) != needle
            else:
                keep = lambda r: needle in str(r.get(column, ""))
            return StepValue(OutputKind.TABLE, [r for r in rows if keep(r)])
    raise ExecutorFailure(f"bad predicate {predicate!r}; use col=value, col!=value or col contains value")


def builtin_download(params: dict[str, Any], ctx: StepContext) -> StepValue:
    value = _first_param(params)
    if isinstance(value, Path):
        return StepValue(OutputKind.FILE, (value.name, value.read_bytes()))
    if isinstance(value, list):
        data = (json.dumps(value, sort_keys=True, ensure_ascii=False, indent=2) + "\n").encode()
        return StepValue(OutputKind.FILE, ("download.json", data))
    return StepValue(OutputKind.FILE, ("download.txt", str(value).encode("utf-8")))


def builtin_send_email(params: dict[str, Any], ctx: StepContext) -> StepValue:
    """Test mode: writes an RFC-5322-style message into the outbox directory."""
    to = _as_text(params.get("to", "inbox@example.com"))
    subject = _as_text(params.get("subject", "Workflow results"))
    if "body" in params:
        body = _as_text(params["body"])
    elif "attachment" in params:
        body = _as_text(params["attachment"])
    else:
        others = {k: v for k, v in params.items() if k not in ("to", "subject")}
        body = _as_text(_first_param(others)) if others else ""
    message = f"To: {to}\nSubject: {subject}\n\n{body}\n"
    ref = ctx.store.outbox_write(ctx.run_id, ctx.seq, message)
    return StepValue(OutputKind.TEXT, f"sent: {ref}")


_TRANSLATIONS = {
    "korean": {"hello": "안녕하세요", "thank": "감사", "you": "당신", "meeting": "회의", "minutes": "회의록"},
    "spanish": {"hello": "hola", "thank": "gracias", "you": "usted", "meeting": "reunión"},
    "french": {"hello": "bonjour", "thank": "merci", "you": "vous", "meeting": "réunion"},
}


def builtin_translate(params: dict[str, Any], ctx: StepContext) -> StepValue:
    """Dictionary-table translator: known words swap, the rest pass through."""
    text = _as_text(params.get("text", None) or _first_param(params))
    target = str(params.get("target language", params.get("target_language", ""))).lower()
    table = _TRANSLATIONS.get(target, {})
    words = [table.get(w.lower(), w) for w in text.split(" ")]
    tag = target[:2] if target else "xx"
    return StepValue(OutputKind.TEXT, f"[{tag}] " + " ".join(words))


def builtin_summarize(params: dict[str, Any], ctx: StepContext) -> StepValue:
    """Truncation summarizer: first two sentences, capped at 240 characters."""
    text = _as_text(params.get("text", None) or _first_param(params))
    sentences = [s.strip() for s in text.replace("\n", " ").split(".") if s.strip()]
    summary = ". ".join(sentences[:2])
    if len(summary) > 240:
        summary = summary[:240].rstrip()
    return StepValue(OutputKind.TEXT, summary + ("." if summary else ""))


def builtin_compose_document(params: dict[str, Any], ctx: StepContext) -> StepValue:
    content = _as_text(params.get("content", None) or _first_param(params))
    template = str(params.get("template", "{content}"))
    rendered = template.replace("{content}", content)
    return StepValue(OutputKind.FILE, ("document.txt", (rendered + "\n").encode("utf-8")))


def builtin_organize_content(params: dict[str, Any], ctx: StepContext) -> StepValue:
    text = _as_text(params.get("content", None) or _first_param(params))
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    bullets = "\n".join(f"- {ln}" for ln in lines)
    return StepValue(OutputKind.TEXT, bullets or "- (empty)")


def builtin_fail(params: dict[str, Any], ctx: StepContext) -> StepValue:
    raise ExecutorFailure(str(params.get("reason", "forced failure")))


def builtin_sleep(params: dict[str, Any], ctx: StepContext) -> StepValue:
    """Pause briefly (capped at 5 s); lets tests and demos observe live runs."""
    import time

    seconds = min(float(params.get("seconds", "0.2")), 5.0)
    time.sleep(max(seconds, 0.0))
    return StepValue(OutputKind.TEXT, f"slept {seconds}")


BUILTINS: dict[str, Callable[[dict[str, Any], StepContext], StepValue]] = {
    "echo": builtin_echo,
    "fetch_url": builtin_fetch_url,
    "read_table": builtin_read_table,
    "review_images": builtin_review_images,
    "detect_people": builtin_detect_people,
    "filter_table": builtin_filter_table,
    "download": builtin_download,
    "send_email": builtin_send_email,
    "translate": builtin_translate,
    "summarize": builtin_summarize,
    "compose_document": builtin_compose_document,
    "organize_content": builtin_organize_content,
    "fail": builtin_fail,
    "sleep": builtin_sleep,
}


# ---------------------------------------------------------------------------
# Output persistence

_EXTENSIONS = {OutputKind.TEXT: "output.txt", OutputKind.URL: "output.url", OutputKind.TABLE: "output.json"}


def write_step_value(store: FileStore, run_id: str, step_index: int, value: StepValue) -> str:
    if value.kind is OutputKind.FILE:
        filename, data = value.value
        return store.write_step_file(run_id, step_index, filename, data)
    if value.kind is OutputKind.TABLE:
        data = (json.dumps(value.value, sort_keys=True, ensure_ascii=False, indent=2) + "\n").encode()
    else:
        data = (str(value.value) + "\n").encode("utf-8")
    return store.write_step_file(run_id, step_index, _EXTENSIONS[value.kind], data)


def load_value_ref(store: FileStore, value_ref: str, kind: OutputKind) -> Any:
    path = store.resolve_ref(value_ref)
    if kind is OutputKind.FILE:
        return path
    text = path.read_text(encoding="utf-8")
    if kind is OutputKind.TABLE:
        return json.loads(text)
    return text.rstrip("\n")


# ---------------------------------------------------------------------------
# The executor


class Executor:
    """Runs ready workflows; one run per workflow at a time."""

    def __init__(self, store: FileStore, pool: ActionPool):
        self.store = store
        self.pool = pool
        self._active: set[str] = set()
        self._guard = threading.Lock()

    def start_run(self, workflow: Workflow, *, background: bool = False) -> Run:
        self._check_runnable(workflow)
        with self._guard:
            if workflow.id in self._active:
                raise ConcurrentRunError(f"workflow {workflow.id} is already running")
            self._active.add(workflow.id)
        run = Run(
            id=new_id(),
            workflow_id=workflow.id,
            status=RunStatus.RUNNING,
            started_at=utcnow(),
        )
        self.store.save_run_doc(run.id, run.to_doc())
        with self.store.lock(workflow.id):
            self.store.save_workflow(replace(workflow, status=WorkflowStatus.RUNNING), check=False)
        if background:
            thread = threading.Thread(target=self._execute, args=(run, workflow), daemon=True)
            thread.start()
            return run
        return self._execute(run, workflow)

    def _check_runnable(self, workflow: Workflow) -> None:
        report = validate(workflow)
        violations = list(report.violations)
        if workflow.status in (WorkflowStatus.RUNNING,):
            raise ConcurrentRunError(f"workflow {workflow.id} is already running")
        for pos, step in enumerate(workflow.steps):
            if not step.fully_resolved:
                violations.append(
                    Violation(RULE_NOT_RESOLVED, f"step {pos} is not fully resolved", pos)
                )
        if not workflow.steps:
            violations.append(Violation(RULE_NOT_RESOLVED, "workflow has no steps"))
        elif workflow.status is WorkflowStatus.DRAFT and not violations:
            violations.append(Violation(RULE_NOT_RESOLVED, "workflow status is draft"))
        if violations:
            raise NotReadyError(
                f"workflow {workflow.id} is not ready to run",
                report=ValidationReport(tuple(violations)),
            )

    def _emit(self, events: list[RunEvent], run_id: str, kind: RunEventKind,
              step_index: int | None = None, payload: str = "") -> RunEvent:
        event = RunEvent(run_id=run_id, seq=len(events), kind=kind,
                         step_index=step_index, payload=payload)
        events.append(event)
        self.store.append_event_line(run_id, event.to_line())
        return event

    def _execute(self, run: Run, workflow: Workflow) -> Run:
        events: list[RunEvent] = []
        outputs: list[StepOutput] = []
        failed = False
        try:
            self._emit(events, run.id, RunEventKind.RUN_STARTED, payload=workflow.id)
            for step in workflow.steps:
                started = self._emit(events, run.id, RunEventKind.STEP_STARTED, step.index)
                try:
                    value = self._run_step(run, step, workflow, outputs, started.seq)
                    ref = write_step_value(self.store, run.id, step.index, value)
                    output = StepOutput(
                        step_index=step.index, kind=value.kind,
                        value_ref=ref, produced_at=utcnow(),
                    )
                    outputs.append(output)
                    workflow = with_step(
                        workflow, step.index, replace(step, output=output)
                    )
                    self._emit(events, run.id, RunEventKind.STEP_COMPLETED, step.index, ref)
                except Exception as exc:
                    self._emit(events, run.id, RunEventKind.STEP_FAILED, step.index, str(exc))
                    failed = True
                    break
            if failed:
                self._emit(events, run.id, RunEventKind.RUN_FAILED, payload="step failed")
            else:
                self._emit(events, run.id, RunEventKind.RUN_COMPLETED)
        finally:
            status = RunStatus.FAILED if failed else RunStatus.SUCCEEDED
            run = replace(run, status=status, ended_at=utcnow(), step_results=tuple(outputs))
            self.store.save_run_doc(run.id, run.to_doc())
            wf_status = WorkflowStatus.FAILED if failed else WorkflowStatus.SUCCEEDED
            workflow = replace(workflow, status=wf_status, updated_at=utcnow())
            with self.store.lock(workflow.id):
                try:
                    self.store.load_workflow(workflow.id)
                except UnknownIdError:
                    pass  # deleted mid-run; do not resurrect the file
                else:
                    self.store.save_workflow(workflow, check=False)
            with self._guard:
                self._active.discard(workflow.id)
        return run

    def _run_step(self, run: Run, step: Step, workflow: Workflow,
                  outputs: list[StepOutput], seq: int) -> StepValue:
        binding = step.action
        assert binding is not None  # readiness was checked before the run
        action = self.pool.get(binding.action_id)
        if action is None:
            raise ExecutorFailure(f"action {binding.action_id!r} is no longer registered")
        params = dict(binding.parameters)
        # Unbound upstream-reference parameters: satisfy them from capsules now.
        for capsule in step.data:
            src = capsule.source
            if src is not None and src.kind.value == "step_output":
                for spec in action.parameter_schema:
                    if spec.label not in params:
                        params[spec.label] = ParamValue(ParamKind.STEP_OUTPUT, src.step_index)
        resolved = {
            label: self._resolve_param(value, step.index, outputs)
            for label, value in params.items()
        }
        ctx = StepContext(store=self.store, run_id=run.id, step_index=step.index, seq=seq)
        if action.executor_kind == "builtin":
            function = action.executor_config.get("function", action.name)
            builtin = BUILTINS.get(function)
            if builtin is None:
                raise ExecutorFailure(f"unknown builtin {function!r}")
            return builtin(resolved, ctx)
        raise ExecutorFailure(
            f"executor kind {action.executor_kind!r} requires deployment configuration"
        )

    def _resolve_param(self, value: ParamValue, step_index: int, outputs: list[StepOutput]) -> Any:
        if value.kind is ParamKind.STEP_OUTPUT:
            index = int(value.value)
            if index >= step_index:
                raise ExecutorFailure(
                    f"step {step_index} cannot read output of step {index}"
                )
            for output in outputs:
                if output.step_index == index:
                    return load_value_ref(self.store, output.value_ref, output.kind)
            raise ExecutorFailure(f"no output recorded for step {index}")
        if value.kind is ParamKind.FILE:
            return Path(str(value.value))
        if value.kind is ParamKind.TABLE:
            return _as_rows(Path(str(value.value)))
        return str(value.value)

    # -- event access -------------------------------------------------------

    def events(self, run_id: str, after_seq: int = -1) -> list[RunEvent]:
        lines = self.store.read_event_lines(run_id)
        events = [event_from_doc(json.loads(line)) for line in lines]
        return [e for e in events if e.seq > after_seq]
