"""Persistent domain types: workflows, steps, capsules, bindings, history.

Types are immutable value objects; edits produce new revisions via the
`with_*` helpers. The canonical file format is UTF-8 JSON with alphabetically
sorted keys, two-space indentation and a mandatory `"version": "1"` field;
equal workflows serialize to identical bytes.
"""

from __future__ import annotations

import json
import uuid
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from typing import Any

from . import recurrence
from .errors import (
    InvalidExpressionError,
    InvalidTimezoneError,
    ParseError,
    UnknownFieldWarning,
    UnknownIdError,
    ValidationFailedError,
    VersionMismatchError,
)

FORMAT_VERSION = "1"


class WorkflowStatus(str, Enum):
    DRAFT = "draft"
    READY = "ready"
    RUNNING = "running"
    SUCCEEDED = "succeeded"
    FAILED = "failed"


class CapsuleState(str, Enum):
    UNRESOLVED = "unresolved"
    RESOLVED = "resolved"


class SourceKind(str, Enum):
    FILE = "file"
    URL = "url"
    DATABASE = "database"
    STEP_OUTPUT = "step_output"


class ContextKind(str, Enum):
    FORMAT = "format"
    CONSTRAINT = "constraint"
    DESTINATION = "destination"
    OTHER = "other"


class OutputKind(str, Enum):
    FILE = "file"
    TABLE = "table"
    TEXT = "text"
    URL = "url"


class ParamKind(str, Enum):
    LITERAL = "literal"
    FILE = "file"
    URL = "url"
    TABLE = "table"
    STEP_OUTPUT = "step_output"


def new_id() -> str:
    return uuid.uuid4().hex[:12]


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


@dataclass(frozen=True)
class DataSource:
    """Where a capsule's data comes from; step_output points at an earlier step."""

    kind: SourceKind
    ref: str | None = None
    step_index: int | None = None

    @staticmethod
    def file(ref: str) -> "DataSource":
        return DataSource(SourceKind.FILE, ref=ref)

    @staticmethod
    def url(ref: str) -> "DataSource":
        return DataSource(SourceKind.URL, ref=ref)

    @staticmethod
    def database(ref: str) -> "DataSource":
        return DataSource(SourceKind.DATABASE, ref=ref)

    @staticmethod
    def step_output(index: int) -> "DataSource":
        return DataSource(SourceKind.STEP_OUTPUT, step_index=index)


@dataclass(frozen=True)
class DataCapsule:
    label: str
    state: CapsuleState = CapsuleState.UNRESOLVED
    source: DataSource | None = None

    @property
    def resolved(self) -> bool:
        return self.state is CapsuleState.RESOLVED


@dataclass(frozen=True)
class ContextAnnotation:
    text: str
    kind: ContextKind = ContextKind.OTHER


@dataclass(frozen=True)
class ParamValue:
    kind: ParamKind
    value: str | int


@dataclass(frozen=True)
class ActionBinding:
    action_id: str
    verb: str
    score: float
    parameters: dict[str, ParamValue] = field(default_factory=dict)


@dataclass(frozen=True)
class StepOutput:
    step_index: int
    kind: OutputKind
    value_ref: str
    produced_at: datetime


@dataclass(frozen=True)
class Step:
    index: int
    text: str
    data: tuple[DataCapsule, ...] = ()
    action: ActionBinding | None = None
    context: tuple[ContextAnnotation, ...] = ()
    output: StepOutput | None = None

    @property
    def fully_resolved(self) -> bool:
        return self.action is not None and all(c.resolved for c in self.data)


@dataclass(frozen=True)
class RefinementRecord:
    iteration: int
    feedback: str
    plan_before: tuple[str, ...]
    plan_after: tuple[str, ...]
    approved: bool = False


@dataclass(frozen=True)
class Schedule:
    expression: str
    timezone: str
    next_fire: datetime


@dataclass(frozen=True)
class Workflow:
    id: str
    title: str
    steps: tuple[Step, ...] = ()
    status: WorkflowStatus = WorkflowStatus.DRAFT
    schedule: Schedule | None = None
    refinement_history: tuple[RefinementRecord, ...] = ()
    created_at: datetime = field(default_factory=utcnow)
    updated_at: datetime = field(default_factory=utcnow)

    @property
    def fully_resolved(self) -> bool:
        return all(s.fully_resolved for s in self.steps)

    def step(self, index: int) -> Step:
        if not 0 <= index < len(self.steps):
            raise UnknownIdError(f"no step {index} in workflow {self.id}")
        return self.steps[index]


# ---------------------------------------------------------------------------
# Validation

RULE_INDICES = "non-contiguous indices"
RULE_INDEX_MISMATCH = "step index mismatch"
RULE_FORWARD_REF = "forward data reference"
RULE_CAPSULE_STATE = "capsule state/source mismatch"
RULE_BAD_SOURCE = "malformed data source"
RULE_NOT_RESOLVED = "unresolved step in ready workflow"
RULE_EMPTY_CONTEXT = "empty context text"
RULE_HISTORY = "non-contiguous refinement history"
RULE_APPROVAL = "invalid approval"
RULE_SCHEDULE = "inconsistent schedule"


@dataclass(frozen=True)
class Violation:
    rule: str
    message: str
    step_index: int | None = None


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_doc(self) -> list[dict[str, Any]]:
        return [
            {"message": v.message, "rule": v.rule, "step_index": v.step_index}
            for v in self.violations
        ]


def validate(workflow: Workflow) -> ValidationReport:
    """Check every invariant; returns a report and never raises."""
    out: list[Violation] = []
    k = len(workflow.steps)

    if sorted(s.index for s in workflow.steps) != list(range(k)):
        out.append(Violation(RULE_INDICES, f"step indices must be exactly 0..{k - 1}"))
    for pos, step in enumerate(workflow.steps):
        if step.index != pos:
            out.append(
                Violation(RULE_INDEX_MISMATCH, f"step at position {pos} has index {step.index}", pos)
            )
        seen_labels: set[str] = set()
        for capsule in step.data:
            if capsule.label in seen_labels:
                out.append(
                    Violation(RULE_BAD_SOURCE, f"duplicate capsule label {capsule.label!r}", pos)
                )
            seen_labels.add(capsule.label)
            if capsule.resolved != (capsule.source is not None):
                out.append(
                    Violation(
                        RULE_CAPSULE_STATE,
                        f"capsule {capsule.label!r} is {capsule.state.value} but "
                        f"{'has' if capsule.source else 'lacks'} a source",
                        pos,
                    )
                )
            src = capsule.source
            if src is None:
                continue
            if src.kind is SourceKind.STEP_OUTPUT:
                if src.step_index is None or src.ref is not None:
                    out.append(
                        Violation(RULE_BAD_SOURCE, f"capsule {capsule.label!r}: step_output source needs step_index only", pos)
                    )
                elif src.step_index < 0:
                    out.append(
                        Violation(RULE_BAD_SOURCE, f"capsule {capsule.label!r}: negative step reference", pos)
                    )
                elif src.step_index >= step.index:
                    out.append(
                        Violation(
                            RULE_FORWARD_REF,
                            f"capsule {capsule.label!r} references step {src.step_index} from step {step.index}",
                            pos,
                        )
                    )
            elif src.ref is None or src.step_index is not None:
                out.append(
                    Violation(RULE_BAD_SOURCE, f"capsule {capsule.label!r}: {src.kind.value} source needs ref only", pos)
                )
        for annotation in step.context:
            if not annotation.text.strip():
                out.append(Violation(RULE_EMPTY_CONTEXT, "context annotation is empty", pos))
        if workflow.status is WorkflowStatus.READY and not step.fully_resolved:
            out.append(
                Violation(RULE_NOT_RESOLVED, f"step {pos} is not fully resolved", pos)
            )

    history = workflow.refinement_history
    if [r.iteration for r in history] != list(range(len(history))):
        out.append(Violation(RULE_HISTORY, "refinement iterations must be 0..n-1 in order"))
    approved = [i for i, r in enumerate(history) if r.approved]
    if len(approved) > 1:
        out.append(Violation(RULE_APPROVAL, "multiple approved refinement records"))
    elif approved and approved[0] != len(history) - 1:
        out.append(Violation(RULE_APPROVAL, "approved record must be the final record"))

    if workflow.schedule is not None:
        sched = workflow.schedule
        try:
            if not recurrence.matches(sched.expression, sched.timezone, sched.next_fire):
                out.append(
                    Violation(RULE_SCHEDULE, "next_fire does not match the recurrence expression")
                )
        except (InvalidExpressionError, InvalidTimezoneError) as exc:
            out.append(Violation(RULE_SCHEDULE, str(exc)))

    return ValidationReport(tuple(out))


# ---------------------------------------------------------------------------
# Canonical serialization

def _dt_to_doc(dt: datetime) -> str:
    return dt.isoformat()


def _param_to_doc(p: ParamValue) -> dict[str, Any]:
    return {"kind": p.kind.value, "value": p.value}


def _source_to_doc(src: DataSource | None) -> dict[str, Any] | None:
    if src is None:
        return None
    if src.kind is SourceKind.STEP_OUTPUT:
        return {"kind": src.kind.value, "step_index": src.step_index}
    return {"kind": src.kind.value, "ref": src.ref}


def _output_to_doc(out: StepOutput | None) -> dict[str, Any] | None:
    if out is None:
        return None
    return {
        "kind": out.kind.value,
        "produced_at": _dt_to_doc(out.produced_at),
        "step_index": out.step_index,
        "value_ref": out.value_ref,
    }


def _step_to_doc(step: Step) -> dict[str, Any]:
    action = None
    if step.action is not None:
        action = {
            "action_id": step.action.action_id,
            "parameters": {k: _param_to_doc(v) for k, v in sorted(step.action.parameters.items())},
            "score": step.action.score,
            "verb": step.action.verb,
        }
    return {
        "action": action,
        "context": [{"kind": c.kind.value, "text": c.text} for c in step.context],
        "data": [
            {"label": c.label, "source": _source_to_doc(c.source), "state": c.state.value}
            for c in step.data
        ],
        "index": step.index,
        "output": _output_to_doc(step.output),
        "text": step.text,
    }


def to_doc(workflow: Workflow) -> dict[str, Any]:
    schedule = None
    if workflow.schedule is not None:
        schedule = {
            "expression": workflow.schedule.expression,
            "next_fire": _dt_to_doc(workflow.schedule.next_fire),
            "timezone": workflow.schedule.timezone,
        }
    return {
        "created_at": _dt_to_doc(workflow.created_at),
        "id": workflow.id,
        "refinement_history": [
            {
                "approved": r.approved,
                "feedback": r.feedback,
                "iteration": r.iteration,
                "plan_after": list(r.plan_after),
                "plan_before": list(r.plan_before),
            }
            for r in workflow.refinement_history
        ],
        "schedule": schedule,
        "status": workflow.status.value,
        "steps": [_step_to_doc(s) for s in workflow.steps],
        "title": workflow.title,
        "updated_at": _dt_to_doc(workflow.updated_at),
        "version": FORMAT_VERSION,
    }


def canonical_bytes(doc: Any) -> bytes:
    """The one true JSON rendering used for files, API bodies and exports."""
    return (json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def serialize(workflow: Workflow, *, check: bool = True) -> bytes:
    if check:
        report = validate(workflow)
        if not report.ok:
            raise ValidationFailedError(
                f"workflow {workflow.id} has {len(report.violations)} violation(s)",
                report=report,
            )
    return canonical_bytes(to_doc(workflow))


# ---------------------------------------------------------------------------
# Deserialization with path-tracked errors


class _Reader:
    def __init__(self, doc: Any):
        self.doc = doc

    def fail(self, path: str, message: str) -> None:
        raise ParseError(f"{path}: {message}", path=path)

    def obj(self, value: Any, path: str, known: set[str]) -> dict[str, Any]:
        if not isinstance(value, dict):
            self.fail(path, f"expected object, got {type(value).__name__}")
        for key in value:
            if key not in known:
                warnings.warn(
                    UnknownFieldWarning(f"ignoring unknown field {path}.{key}"), stacklevel=4
                )
        return value

    def req(self, value: dict[str, Any], path: str, key: str) -> Any:
        if key not in value:
            self.fail(f"{path}.{key}", "missing required field")
        return value[key]

    def str_(self, value: Any, path: str) -> str:
        if not isinstance(value, str):
            self.fail(path, f"expected string, got {type(value).__name__}")
        return value

    def int_(self, value: Any, path: str) -> int:
        if not isinstance(value, int) or isinstance(value, bool):
            self.fail(path, f"expected integer, got {type(value).__name__}")
        return value

    def num(self, value: Any, path: str) -> float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            self.fail(path, f"expected number, got {type(value).__name__}")
        return float(value)

    def bool_(self, value: Any, path: str) -> bool:
        if not isinstance(value, bool):
            self.fail(path, f"expected boolean, got {type(value).__name__}")
        return value

    def list_(self, value: Any, path: str) -> list[Any]:
        if not isinstance(value, list):
            self.fail(path, f"expected array, got {type(value).__name__}")
        return value

    def enum(self, value: Any, path: str, enum_cls: type[Enum]) -> Any:
        text = self.str_(value, path)
        try:
            return enum_cls(text)
        except ValueError:
            allowed = ", ".join(e.value for e in enum_cls)
            self.fail(path, f"expected one of [{allowed}], got {text!r}")

    def dt(self, value: Any, path: str) -> datetime:
        text = self.str_(value, path)
        try:
            return datetime.fromisoformat(text)
        except ValueError:
            self.fail(path, f"invalid timestamp {text!r}")


def _read_source(r: _Reader, value: Any, path: str) -> DataSource | None:
    if value is None:
        return None
    obj = r.obj(value, path, {"kind", "ref", "step_index"})
    kind = r.enum(r.req(obj, path, "kind"), f"{path}.kind", SourceKind)
    if kind is SourceKind.STEP_OUTPUT:
        index = r.int_(r.req(obj, path, "step_index"), f"{path}.step_index")
        return DataSource.step_output(index)
    ref = r.str_(r.req(obj, path, "ref"), f"{path}.ref")
    return DataSource(kind, ref=ref)


def _read_step(r: _Reader, value: Any, path: str) -> Step:
    obj = r.obj(value, path, {"action", "context", "data", "index", "output", "text"})
    data: list[DataCapsule] = []
    for i, item in enumerate(r.list_(r.req(obj, path, "data"), f"{path}.data")):
        dpath = f"{path}.data[{i}]"
        dobj = r.obj(item, dpath, {"label", "source", "state"})
        data.append(
            DataCapsule(
                label=r.str_(r.req(dobj, dpath, "label"), f"{dpath}.label"),
                state=r.enum(r.req(dobj, dpath, "state"), f"{dpath}.state", CapsuleState),
                source=_read_source(r, dobj.get("source"), f"{dpath}.source"),
            )
        )
    context: list[ContextAnnotation] = []
    for i, item in enumerate(r.list_(r.req(obj, path, "context"), f"{path}.context")):
        cpath = f"{path}.context[{i}]"
        cobj = r.obj(item, cpath, {"kind", "text"})
        context.append(
            ContextAnnotation(
                text=r.str_(r.req(cobj, cpath, "text"), f"{cpath}.text"),
                kind=r.enum(r.req(cobj, cpath, "kind"), f"{cpath}.kind", ContextKind),
            )
        )
    action = None
    avalue = r.req(obj, path, "action")
    if avalue is not None:
        apath = f"{path}.action"
        aobj = r.obj(avalue, apath, {"action_id", "parameters", "score", "verb"})
        params: dict[str, ParamValue] = {}
        pobj = r.req(aobj, apath, "parameters")
        if not isinstance(pobj, dict):
            r.fail(f"{apath}.parameters", "expected object")
        for name, pvalue in pobj.items():
            ppath = f"{apath}.parameters.{name}"
            pv = r.obj(pvalue, ppath, {"kind", "value"})
            kind = r.enum(r.req(pv, ppath, "kind"), f"{ppath}.kind", ParamKind)
            raw = r.req(pv, ppath, "value")
            if kind is ParamKind.STEP_OUTPUT:
                raw = r.int_(raw, f"{ppath}.value")
            else:
                raw = r.str_(raw, f"{ppath}.value")
            params[name] = ParamValue(kind, raw)
        action = ActionBinding(
            action_id=r.str_(r.req(aobj, apath, "action_id"), f"{apath}.action_id"),
            verb=r.str_(r.req(aobj, apath, "verb"), f"{apath}.verb"),
            score=r.num(r.req(aobj, apath, "score"), f"{apath}.score"),
            parameters=params,
        )
    output = None
    ovalue = r.req(obj, path, "output")
    if ovalue is not None:
        opath = f"{path}.output"
        oobj = r.obj(ovalue, opath, {"kind", "produced_at", "step_index", "value_ref"})
        output = StepOutput(
            step_index=r.int_(r.req(oobj, opath, "step_index"), f"{opath}.step_index"),
            kind=r.enum(r.req(oobj, opath, "kind"), f"{opath}.kind", OutputKind),
            value_ref=r.str_(r.req(oobj, opath, "value_ref"), f"{opath}.value_ref"),
            produced_at=r.dt(r.req(oobj, opath, "produced_at"), f"{opath}.produced_at"),
        )
    return Step(
        index=r.int_(r.req(obj, path, "index"), f"{path}.index"),
        text=r.str_(r.req(obj, path, "text"), f"{path}.text"),
        data=tuple(data),
        action=action,
        context=tuple(context),
        output=output,
    )


def from_doc(doc: Any) -> Workflow:
    r = _Reader(doc)
    obj = r.obj(
        doc,
        "$",
        {
            "created_at", "id", "refinement_history", "schedule", "status",
            "steps", "title", "updated_at", "version",
        },
    )
    version = r.str_(r.req(obj, "$", "version"), "$.version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"unsupported format version {version!r} (expected {FORMAT_VERSION!r})"
        )
    steps = tuple(
        _read_step(r, item, f"$.steps[{i}]")
        for i, item in enumerate(r.list_(r.req(obj, "$", "steps"), "$.steps"))
    )
    history: list[RefinementRecord] = []
    for i, item in enumerate(
        r.list_(r.req(obj, "$", "refinement_history"), "$.refinement_history")
    ):
        hpath = f"$.refinement_history[{i}]"
        hobj = r.obj(item, hpath, {"approved", "feedback", "iteration", "plan_after", "plan_before"})
        history.append(
            RefinementRecord(
                iteration=r.int_(r.req(hobj, hpath, "iteration"), f"{hpath}.iteration"),
                feedback=r.str_(r.req(hobj, hpath, "feedback"), f"{hpath}.feedback"),
                plan_before=tuple(
                    r.str_(t, f"{hpath}.plan_before[{j}]")
                    for j, t in enumerate(r.list_(r.req(hobj, hpath, "plan_before"), f"{hpath}.plan_before"))
                ),
                plan_after=tuple(
                    r.str_(t, f"{hpath}.plan_after[{j}]")
                    for j, t in enumerate(r.list_(r.req(hobj, hpath, "plan_after"), f"{hpath}.plan_after"))
                ),
                approved=r.bool_(r.req(hobj, hpath, "approved"), f"{hpath}.approved"),
            )
        )
    schedule = None
    svalue = r.req(obj, "$", "schedule")
    if svalue is not None:
        spath = "$.schedule"
        sobj = r.obj(svalue, spath, {"expression", "next_fire", "timezone"})
        schedule = Schedule(
            expression=r.str_(r.req(sobj, spath, "expression"), f"{spath}.expression"),
            timezone=r.str_(r.req(sobj, spath, "timezone"), f"{spath}.timezone"),
            next_fire=r.dt(r.req(sobj, spath, "next_fire"), f"{spath}.next_fire"),
        )
    return Workflow(
        id=r.str_(r.req(obj, "$", "id"), "$.id"),
        title=r.str_(r.req(obj, "$", "title"), "$.title"),
        steps=steps,
        status=r.enum(r.req(obj, "$", "status"), "$.status", WorkflowStatus),
        schedule=schedule,
        refinement_history=tuple(history),
        created_at=r.dt(r.req(obj, "$", "created_at"), "$.created_at"),
        updated_at=r.dt(r.req(obj, "$", "updated_at"), "$.updated_at"),
    )


def deserialize(data: bytes | str) -> Workflow:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"$: not valid UTF-8 ({exc.reason})", path="$") from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"$: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", path="$"
        ) from None
    return from_doc(doc)


# ---------------------------------------------------------------------------
# Revision helpers


def with_step(workflow: Workflow, index: int, step: Step) -> Workflow:
    steps = list(workflow.steps)
    steps[index] = step
    return replace(workflow, steps=tuple(steps), updated_at=utcnow())


def with_steps(workflow: Workflow, steps: list[Step] | tuple[Step, ...]) -> Workflow:
    reindexed = tuple(replace(s, index=i) for i, s in enumerate(steps))
    return replace(workflow, steps=reindexed, updated_at=utcnow())


def attach_source(workflow: Workflow, step_index: int, label: str, source: DataSource) -> Workflow:
    """Resolve the capsule `label` on one step; raises if the label is unknown."""
    step = workflow.step(step_index)
    capsules = list(step.data)
    for i, capsule in enumerate(capsules):
        if capsule.label == label:
            capsules[i] = DataCapsule(label=label, state=CapsuleState.RESOLVED, source=source)
            break
    else:
        raise UnknownIdError(f"step {step_index} has no capsule {label!r}")
    return with_step(workflow, step_index, replace(step, data=tuple(capsules)))


def recompute_status(workflow: Workflow) -> Workflow:
    """Flip draft/ready from resolution state; terminal statuses are kept."""
    if workflow.status in (WorkflowStatus.RUNNING,):
        return workflow
    target = WorkflowStatus.READY if (workflow.steps and workflow.fully_resolved) else WorkflowStatus.DRAFT
    if workflow.status in (WorkflowStatus.SUCCEEDED, WorkflowStatus.FAILED) and target is WorkflowStatus.READY:
        return workflow
    if target is workflow.status:
        return workflow
    return replace(workflow, status=target, updated_at=utcnow())
