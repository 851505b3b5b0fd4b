"""Composition root: wires store, gateway, pool, executor, scheduler and the
suggestion pipeline behind the operations the API and CLI expose.

Per-workflow mutations are serialized through the store's locks; step-list
edits rebuild the chain, reusing unchanged steps and re-extracting new ones.
"""

from __future__ import annotations

import os
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import Any

from . import actions as actionpool
from . import entities as entities_mod
from . import planner as planner_mod
from . import rulebased
from .actions import ActionPool, load_manifest_doc, manifest_doc
from .errors import (
    ConcurrentRunError,
    ParseError,
    UnknownIdError,
    ValidationFailedError,
)
from .executor import Executor, Run
from .gateway import Gateway
from .model import (
    CapsuleState,
    DataCapsule,
    DataSource,
    SourceKind,
    Step,
    Workflow,
    WorkflowStatus,
    deserialize,
    recompute_status,
    utcnow,
    validate,
)
from .planner import Feedback, FeedbackKind, Plan
from .scheduler import Scheduler
from .store import FileStore
from .suggestions import SuggestionService


def _load_default_manifests(pool: ActionPool) -> None:
    package_dir = resources.files("nlflow") / "manifests"
    for entry in sorted(package_dir.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            import json

            pool.register(load_manifest_doc(json.loads(entry.read_text()), path=entry.name))


class Engine:
    def __init__(self, store: FileStore, gateway: Gateway, pool: ActionPool):
        self.store = store
        self.gateway = gateway
        self.pool = pool
        self.executor = Executor(store, pool)
        self.scheduler = Scheduler(store, self.executor)
        self.suggestions = SuggestionService(gateway, pool, store)

    # -- workflows ------------------------------------------------------------

    def get_workflow(self, workflow_id: str) -> Workflow:
        return self.store.load_workflow(workflow_id)

    def _load_mutable(self, workflow_id: str) -> Workflow:
        """Load for mutation; running workflows are off limits until the run ends."""
        workflow = self.store.load_workflow(workflow_id)
        if workflow.status is WorkflowStatus.RUNNING:
            raise ConcurrentRunError(
                f"workflow {workflow_id} is running; wait for the run to finish"
            )
        return workflow

    def workflow_bytes(self, workflow_id: str) -> bytes:
        return self.store.workflow_bytes(workflow_id)

    def list_workflows(self) -> list[Workflow]:
        return self.store.list_workflows()

    def delete_workflow(self, workflow_id: str) -> None:
        with self.store.lock(workflow_id):
            self._load_mutable(workflow_id)
            self.store.delete_workflow(workflow_id)

    def import_workflow(self, data: bytes) -> Workflow:
        """Upsert a workflow from its canonical byte form."""
        workflow = deserialize(data)
        report = validate(workflow)
        if not report.ok:
            raise ValidationFailedError(
                f"imported workflow has {len(report.violations)} violation(s)", report=report
            )
        with self.store.lock(workflow.id):
            try:
                self._load_mutable(workflow.id)
            except UnknownIdError:
                pass
            self.store.save_workflow(workflow)
        return workflow

    # -- capsule linking -------------------------------------------------------

    def attach_data(
        self, workflow_id: str, step_index: int, label: str, source: DataSource
    ) -> Workflow:
        from .model import attach_source

        with self.store.lock(workflow_id):
            workflow = self._load_mutable(workflow_id)
            workflow = attach_source(workflow, step_index, label, source)
            step = workflow.steps[step_index]
            rebound = actionpool.rebind_parameters(step, self.pool)
            if rebound is not None:
                workflow = replace(
                    workflow,
                    steps=tuple(rebound if s.index == step_index else s for s in workflow.steps),
                )
            workflow = recompute_status(workflow)
            self.store.save_workflow(workflow)
            return workflow

    # -- refinement -----------------------------------------------------------

    def plan_of(self, workflow: Workflow) -> Plan:
        modifications = sum(1 for r in workflow.refinement_history if not r.approved)
        final = any(r.approved for r in workflow.refinement_history)
        return Plan(
            steps=tuple(s.text for s in workflow.steps), iteration=modifications, final=final
        )

    def refine_workflow(self, workflow_id: str, feedback: Feedback) -> Workflow:
        with self.store.lock(workflow_id):
            workflow = self._load_mutable(workflow_id)
            current = self.plan_of(workflow)
            new_plan, record = planner_mod.refine(current, feedback, self.gateway)
            history = workflow.refinement_history + (record,)
            if feedback.kind is FeedbackKind.APPROVE:
                workflow = replace(workflow, refinement_history=history, updated_at=utcnow())
            else:
                workflow = self._rebuild_steps(workflow, list(new_plan.steps), strict=False)
                workflow = replace(workflow, refinement_history=history, updated_at=utcnow())
            workflow = recompute_status(workflow)
            self.store.save_workflow(workflow)
            return workflow

    # -- step-list edits --------------------------------------------------------

    def patch_steps(self, workflow_id: str, op: dict[str, Any]) -> Workflow:
        """Apply one add/remove/reorder/edit operation to the step list."""
        with self.store.lock(workflow_id):
            workflow = self._load_mutable(workflow_id)
            texts = [s.text for s in workflow.steps]
            kind = op.get("op")
            if kind == "add":
                text = rulebased.compose_step_text(str(op.get("text", "")), texts)
                position = int(op.get("position", len(texts)))
                position = max(0, min(position, len(texts)))
                texts.insert(position, text)
            elif kind == "remove":
                index = self._step_index(workflow, op)
                del texts[index]
            elif kind == "edit":
                index = self._step_index(workflow, op)
                texts[index] = rulebased.compose_step_text(str(op.get("text", "")), texts[:index])
            elif kind == "reorder":
                src = int(op.get("from", -1))
                dst = int(op.get("to", -1))
                if not (0 <= src < len(texts) and 0 <= dst < len(texts)):
                    raise UnknownIdError(f"reorder positions out of range: {src} -> {dst}")
                texts.insert(dst, texts.pop(src))
            elif kind == "bind":
                index = self._step_index(workflow, op)
                return self._bind_step(workflow, index, str(op.get("action_id", "")))
            else:
                raise ParseError(
                    f"$.op: expected add|remove|edit|reorder|bind, got {kind!r}", path="$.op"
                )
            strict = kind == "reorder"
            candidate = self._rebuild_steps(workflow, texts, strict=strict)
            report = validate(candidate)
            if not report.ok:
                raise ValidationFailedError(
                    "edit would leave the workflow invalid", report=report
                )
            candidate = recompute_status(candidate)
            self.store.save_workflow(candidate)
            return candidate

    def step_candidates(self, workflow_id: str, step_index: int, k: int = 10):
        """Retrieval candidates for one step, for the action panel."""
        workflow = self.store.load_workflow(workflow_id)
        step = workflow.step(step_index)
        return actionpool.retrieve(step.text, self.pool, k=k, step_index=step_index)

    def _bind_step(self, workflow: Workflow, step_index: int, action_id: str) -> Workflow:
        """Manual override: bind a step to a chosen action."""
        action = self.pool.get(action_id)
        if action is None:
            raise UnknownIdError(f"no action {action_id!r} in the pool")
        step = workflow.step(step_index)
        verb = step.action.verb if step.action else ""
        if not verb:
            from . import textops

            found = textops.first_verb(step.text)
            verb = found[0] if found else ""
        result = actionpool.bind_to(
            step, action, verb, actionpool.similarity(step.text, action)
        )
        from .suggestions import capsule_for_missing_parameter

        capsules = list(step.data)
        known = {c.label for c in capsules}
        for label in result.missing_required:
            if label not in known:
                capsules.append(capsule_for_missing_parameter(label, step_index))
        updated = replace(step, action=result.binding, data=tuple(capsules))
        if len(capsules) > len(step.data):
            refreshed = actionpool.rebind_parameters(updated, self.pool)
            if refreshed is not None:
                updated = refreshed
        workflow = replace(
            workflow,
            steps=tuple(updated if s.index == step_index else s for s in workflow.steps),
            updated_at=utcnow(),
        )
        workflow = recompute_status(workflow)
        self.store.save_workflow(workflow)
        return workflow

    @staticmethod
    def _step_index(workflow: Workflow, op: dict[str, Any]) -> int:
        index = int(op.get("step", -1))
        if not 0 <= index < len(workflow.steps):
            raise UnknownIdError(f"no step {index} in workflow {workflow.id}")
        return index

    def _rebuild_steps(self, workflow: Workflow, new_texts: list[str], *, strict: bool) -> Workflow:
        """Rebuild the chain for an edited text list.

        Steps whose text survives are reused with their capsule sources and
        binding; upstream references are remapped to the steps' new indices.
        Broken references become unresolved capsules unless `strict`, in which
        case they are kept so validation can reject the edit (reorders).
        """
        old_steps = list(workflow.steps)
        used: set[int] = set()
        reused: dict[int, Step] = {}
        old_to_new: dict[int, int] = {}
        for new_i, text in enumerate(new_texts):
            match = next(
                (s for s in old_steps if s.text == text and s.index not in used), None
            )
            if match is not None:
                used.add(match.index)
                reused[new_i] = match
                old_to_new[match.index] = new_i

        entity_set = None
        if len(reused) < len(new_texts):
            plan = Plan(steps=tuple(new_texts))
            entity_set = entities_mod.extract(plan, self.gateway)

        steps: list[Step] = []
        for new_i, text in enumerate(new_texts):
            if new_i in reused:
                old = reused[new_i]
                capsules = []
                for capsule in old.data:
                    src = capsule.source
                    if src is not None and src.kind is SourceKind.STEP_OUTPUT:
                        mapped = old_to_new.get(src.step_index)
                        if mapped is not None and (strict or mapped < new_i):
                            capsules.append(
                                DataCapsule(
                                    label=capsule.label,
                                    state=CapsuleState.RESOLVED,
                                    source=DataSource.step_output(mapped),
                                )
                            )
                        else:
                            capsules.append(DataCapsule(label=capsule.label))
                    else:
                        capsules.append(capsule)
                steps.append(
                    replace(old, index=new_i, data=tuple(capsules), output=None)
                )
            else:
                record = entity_set.record(new_i)  # type: ignore[union-attr]
                capsules = []
                for label in record.data_labels:
                    upstream = entities_mod.upstream_index(label, new_i, new_texts)
                    if upstream is None:
                        capsules.append(DataCapsule(label=label))
                    else:
                        capsules.append(
                            DataCapsule(
                                label=label,
                                state=CapsuleState.RESOLVED,
                                source=DataSource.step_output(upstream),
                            )
                        )
                from .model import ContextAnnotation, ContextKind

                context = tuple(
                    ContextAnnotation(
                        text=p, kind=ContextKind(rulebased.context_kind(p))
                    )
                    for p in record.context_phrases
                )
                new_step = Step(index=new_i, text=text, data=tuple(capsules), context=context)
                if len(self.pool) > 0:
                    from .suggestions import capsule_for_missing_parameter

                    candidates = actionpool.retrieve(text, self.pool, step_index=new_i)
                    result = actionpool.map_action(
                        new_step, candidates, record.action_verb, self.pool, self.gateway
                    )
                    extra = [
                        capsule_for_missing_parameter(l, new_i)
                        for l in result.missing_required
                        if l not in {c.label for c in capsules}
                    ]
                    new_step = replace(
                        new_step,
                        action=result.binding,
                        data=tuple(capsules) + tuple(extra),
                    )
                steps.append(new_step)

        rebuilt = replace(workflow, steps=tuple(steps), updated_at=utcnow())
        # Parameters may point at moved steps; refresh every binding.
        refreshed = []
        for step in rebuilt.steps:
            rebound = actionpool.rebind_parameters(step, self.pool)
            refreshed.append(rebound if rebound is not None else step)
        return replace(rebuilt, steps=tuple(refreshed))

    # -- runs -------------------------------------------------------------------

    def run_workflow(self, workflow_id: str, *, background: bool = True) -> Run:
        with self.store.lock(workflow_id):
            workflow = self.store.load_workflow(workflow_id)
        return self.executor.start_run(workflow, background=background)

    def get_run(self, run_id: str) -> dict[str, Any]:
        return self.store.load_run_doc(run_id)

    # -- actions ----------------------------------------------------------------

    def list_actions(self) -> list[dict[str, Any]]:
        return [manifest_doc(a) for a in self.pool.snapshot()]

    def add_action(self, doc: dict[str, Any]) -> dict[str, Any]:
        action = load_manifest_doc(doc)
        self.pool.register(action)
        self.store.save_action_manifest(action.id, manifest_doc(action))
        return manifest_doc(action)


def build_engine(
    data_dir: Path | str,
    *,
    offline: bool = True,
    include_default_actions: bool = True,
) -> Engine:
    """Standard engine wiring: rule-based providers, default + stored actions."""
    store = FileStore(data_dir)
    gateway = Gateway()
    provider = rulebased.RuleBasedProvider()
    gateway.register_all(provider)
    if not offline and os.environ.get("NLFLOW_MODEL_ENDPOINT"):
        from .external import ExternalModelProvider, external_roles

        external = ExternalModelProvider.from_env()
        for role in external_roles():
            gateway.register_provider(role, external)
    pool = ActionPool()
    if include_default_actions:
        _load_default_manifests(pool)
    pool.load_directory(store.actions_dir())
    return Engine(store, gateway, pool)
