"""Entity extraction stage: tag each step's data, action and context.

`extract` asks the extractor agent for per-step records; `materialize` turns
those records into capsules and annotations on a workflow, resolving
anaphoric labels ("the reviewed images") to upstream step outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from . import rulebased
from .errors import IndexMismatchError
from .gateway import AgentRequest, AgentRole, Gateway
from .model import (
    CapsuleState,
    ContextAnnotation,
    ContextKind,
    DataCapsule,
    DataSource,
    Workflow,
)
from .planner import Plan


@dataclass(frozen=True)
class StepEntities:
    step_index: int
    action_verb: str
    data_labels: tuple[str, ...]
    context_phrases: tuple[str, ...]
    issues: tuple[str, ...] = ()


@dataclass(frozen=True)
class EntitySet:
    records: tuple[StepEntities, ...]

    def record(self, step_index: int) -> StepEntities:
        for record in self.records:
            if record.step_index == step_index:
                return record
        raise IndexMismatchError(f"no entity record for step {step_index}")


def extract(plan: Plan, gateway: Gateway) -> EntitySet:
    """Tag action verb, data labels and context phrases for every plan step."""
    request = AgentRequest(
        role=AgentRole.ENTITY_EXTRACTOR,
        instruction="Tag each step's data inputs, action verb and context.",
        payload=json.dumps({"steps": list(plan.steps)}, sort_keys=True),
    )
    response = gateway.invoke(request)
    records = []
    for item in response.content_doc()["entities"]:
        records.append(
            StepEntities(
                step_index=item["step_index"],
                action_verb=item["action_verb"],
                data_labels=tuple(item["data_labels"]),
                context_phrases=tuple(item["context_phrases"]),
                issues=tuple(item.get("issues", [])),
            )
        )
    return EntitySet(records=tuple(records))


def upstream_index(label: str, step_index: int, step_texts: list[str]) -> int | None:
    """Earlier step whose output feeds this label, or None for external input."""
    return rulebased.is_upstream_label(label, step_index, step_texts[:step_index])


def materialize(entity_set: EntitySet, workflow: Workflow) -> Workflow:
    """Attach capsules and context annotations to the workflow's steps.

    Anaphoric labels become capsules already resolved against the upstream
    step's output; everything else starts unresolved (a red chip in the UI).
    """
    indices = sorted(r.step_index for r in entity_set.records)
    if indices != [s.index for s in workflow.steps]:
        raise IndexMismatchError(
            f"entity records cover steps {indices}, workflow has {[s.index for s in workflow.steps]}"
        )
    texts = [s.text for s in workflow.steps]
    steps = []
    for step in workflow.steps:
        record = entity_set.record(step.index)
        capsules = []
        for label in record.data_labels:
            upstream = upstream_index(label, step.index, texts)
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
        context = tuple(
            ContextAnnotation(text=phrase, kind=ContextKind(rulebased.context_kind(phrase)))
            for phrase in record.context_phrases
        )
        steps.append(replace(step, data=tuple(capsules), context=context))
    return replace(workflow, steps=tuple(steps))
