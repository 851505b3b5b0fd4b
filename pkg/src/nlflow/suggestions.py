"""Suggestion pipeline: prompt -> refined query -> plan -> entities -> preview.

A suggestion is the pre-confirmation rendering of the whole pipeline. It is
single-use: `apply` consumes it, materializes a draft workflow, binds actions
and persists; `reject` discards it and may produce a fresh suggestion. The
cache is disk-backed so suggestions survive across processes, and entries
expire after an hour.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Any

from . import actions as actionpool
from . import entities as entities_mod
from . import planner as planner_mod
from . import query as query_mod
from .actions import ActionPool
from .entities import EntitySet, StepEntities
from .errors import ConsumedSuggestionError, StageError
from .gateway import Gateway
from .model import DataCapsule, Step, Workflow, new_id, recompute_status, utcnow
from .planner import Plan
from .query import QueryOption, RefinedQuery
from .store import FileStore

SUGGESTION_TTL = timedelta(hours=1)


@dataclass(frozen=True)
class RenderedStep:
    text: str
    action_verb: str
    data_labels_with_state: tuple[tuple[str, str], ...]  # (label, unresolved|resolved)
    context: tuple[str, ...]


@dataclass(frozen=True)
class Suggestion:
    id: str
    source_prompt: str
    refined: RefinedQuery
    plan: Plan
    entity_set: EntitySet
    rendered_steps: tuple[RenderedStep, ...]
    expires_at: datetime

    def to_doc(self) -> dict[str, Any]:
        return {
            "entity_set": [
                {
                    "action_verb": r.action_verb,
                    "context_phrases": list(r.context_phrases),
                    "data_labels": list(r.data_labels),
                    "issues": list(r.issues),
                    "step_index": r.step_index,
                }
                for r in self.entity_set.records
            ],
            "expires_at": self.expires_at.isoformat(),
            "id": self.id,
            "plan": {
                "final": self.plan.final,
                "iteration": self.plan.iteration,
                "steps": list(self.plan.steps),
            },
            "refined": {
                "clauses": list(self.refined.clauses),
                "option_applied": self.refined.option_applied.value,
                "text": self.refined.text,
            },
            "rendered_steps": [
                {
                    "action_verb": r.action_verb,
                    "context": list(r.context),
                    "data_labels_with_state": [
                        {"label": label, "state": state}
                        for label, state in r.data_labels_with_state
                    ],
                    "text": r.text,
                }
                for r in self.rendered_steps
            ],
            "source_prompt": self.source_prompt,
        }


def suggestion_from_doc(doc: dict[str, Any]) -> Suggestion:
    return Suggestion(
        id=doc["id"],
        source_prompt=doc["source_prompt"],
        refined=RefinedQuery(
            text=doc["refined"]["text"],
            option_applied=QueryOption(doc["refined"]["option_applied"]),
            clauses=tuple(doc["refined"]["clauses"]),
        ),
        plan=Plan(
            steps=tuple(doc["plan"]["steps"]),
            iteration=doc["plan"]["iteration"],
            final=doc["plan"]["final"],
        ),
        entity_set=EntitySet(
            records=tuple(
                StepEntities(
                    step_index=r["step_index"],
                    action_verb=r["action_verb"],
                    data_labels=tuple(r["data_labels"]),
                    context_phrases=tuple(r["context_phrases"]),
                    issues=tuple(r.get("issues", [])),
                )
                for r in doc["entity_set"]
            )
        ),
        rendered_steps=tuple(
            RenderedStep(
                text=r["text"],
                action_verb=r["action_verb"],
                data_labels_with_state=tuple(
                    (d["label"], d["state"]) for d in r["data_labels_with_state"]
                ),
                context=tuple(r["context"]),
            )
            for r in doc["rendered_steps"]
        ),
        expires_at=datetime.fromisoformat(doc["expires_at"]),
    )


def _render(plan: Plan, entity_set: EntitySet) -> tuple[RenderedStep, ...]:
    texts = list(plan.steps)
    rendered = []
    for record in entity_set.records:
        labels = []
        for label in record.data_labels:
            upstream = entities_mod.upstream_index(label, record.step_index, texts)
            labels.append((label, "unresolved" if upstream is None else "resolved"))
        rendered.append(
            RenderedStep(
                text=texts[record.step_index],
                action_verb=record.action_verb,
                data_labels_with_state=tuple(labels),
                context=record.context_phrases,
            )
        )
    return tuple(rendered)


class SuggestionService:
    def __init__(self, gateway: Gateway, pool: ActionPool, store: FileStore, now=utcnow):
        self.gateway = gateway
        self.pool = pool
        self.store = store
        self.now = now

    def suggest(self, prompt: str) -> Suggestion:
        """Run the pipeline; persists nothing beyond the suggestion cache."""
        self.store.prune_suggestions(self.now().isoformat())
        try:
            refined = query_mod.refine_query(query_mod.RawQuery(text=prompt), self.gateway)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(str(exc), stage="query_processor") from exc
        try:
            plan = planner_mod.plan(refined, self.gateway)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(str(exc), stage="planner") from exc
        try:
            entity_set = entities_mod.extract(plan, self.gateway)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(str(exc), stage="entity_extractor") from exc
        suggestion = Suggestion(
            id=new_id(),
            source_prompt=prompt,
            refined=refined,
            plan=plan,
            entity_set=entity_set,
            rendered_steps=_render(plan, entity_set),
            expires_at=self.now() + SUGGESTION_TTL,
        )
        self.store.save_suggestion_doc(suggestion.id, suggestion.to_doc())
        return suggestion

    def _take(self, suggestion_id: str) -> Suggestion:
        doc = self.store.take_suggestion_doc(suggestion_id)
        if doc is None:
            raise ConsumedSuggestionError(
                f"suggestion {suggestion_id!r} unknown or already used"
            )
        suggestion = suggestion_from_doc(doc)
        if suggestion.expires_at < self.now():
            raise ConsumedSuggestionError(f"suggestion {suggestion_id!r} expired")
        return suggestion

    def apply(self, suggestion_id: str) -> Workflow:
        """Materialize the suggestion into a persisted draft workflow."""
        suggestion = self._take(suggestion_id)
        title = suggestion.source_prompt.strip()
        if len(title) > 80:
            title = title[:77] + "..."
        workflow = Workflow(
            id=new_id(),
            title=title,
            steps=tuple(Step(index=i, text=t) for i, t in enumerate(suggestion.plan.steps)),
        )
        workflow = entities_mod.materialize(suggestion.entity_set, workflow)
        workflow = bind_workflow_actions(workflow, suggestion.entity_set, self.pool, self.gateway)
        workflow = recompute_status(workflow)
        self.store.save_workflow(workflow)
        return workflow

    def reject(self, suggestion_id: str, new_prompt: str | None = None) -> Suggestion | None:
        self._take(suggestion_id)
        if new_prompt:
            return self.suggest(new_prompt)
        return None


def capsule_for_missing_parameter(label: str, step_index: int) -> DataCapsule:
    """Capsule standing in for an unsatisfied required parameter.

    Steps after the first feed from the previous step's output by default
    (the chain flows forward); the first step has nothing upstream, so the
    capsule starts unresolved and waits for the user to link a source.
    """
    from .model import CapsuleState, DataSource

    if step_index > 0:
        return DataCapsule(
            label=label,
            state=CapsuleState.RESOLVED,
            source=DataSource.step_output(step_index - 1),
        )
    return DataCapsule(label=label)


def bind_workflow_actions(
    workflow: Workflow,
    entity_set: EntitySet,
    pool: ActionPool,
    gateway: Gateway | None = None,
) -> Workflow:
    """Retrieve and map an action for every step; missing required parameters
    surface as extra capsules (unresolved on the first step, fed from the
    previous step's output otherwise) so readiness reflects them."""
    from dataclasses import replace

    if len(pool) == 0:
        return workflow
    steps = []
    for step in workflow.steps:
        record = entity_set.record(step.index)
        candidates = actionpool.retrieve(step.text, pool, step_index=step.index)
        result = actionpool.map_action(step, candidates, record.action_verb, pool, gateway)
        capsules = list(step.data)
        known = {c.label for c in capsules}
        for label in result.missing_required:
            if label not in known:
                capsules.append(capsule_for_missing_parameter(label, step.index))
        bound = replace(step, action=result.binding, data=tuple(capsules))
        if len(capsules) > len(step.data):
            refreshed = actionpool.rebind_parameters(bound, pool)
            if refreshed is not None:
                bound = refreshed
        steps.append(bound)
    return replace(workflow, steps=tuple(steps), updated_at=utcnow())
