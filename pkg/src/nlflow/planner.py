"""Planning stage: refined query -> ordered step texts, plus feedback refinement.

Refinement is an iterative loop bounded at MAX_ITERATIONS; every modification
emits a RefinementRecord so the whole history can be replayed and audited.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum

from .errors import IterationLimitError, PlanFinalError
from .gateway import AgentRequest, AgentRole, Gateway
from .model import RefinementRecord
from .query import RefinedQuery

MAX_ITERATIONS = 10


class FeedbackKind(str, Enum):
    APPROVE = "approve"
    MODIFY = "modify"


@dataclass(frozen=True)
class Plan:
    steps: tuple[str, ...]
    iteration: int = 0
    final: bool = False


@dataclass(frozen=True)
class Feedback:
    kind: FeedbackKind
    text: str = ""

    def __post_init__(self):
        if self.kind is FeedbackKind.MODIFY and not self.text.strip():
            raise ValueError("modify feedback needs text")


def plan(refined: RefinedQuery, gateway: Gateway) -> Plan:
    """Decompose the refined query into actionable, imperative-first steps."""
    request = AgentRequest(
        role=AgentRole.PLANNER,
        instruction="Break the request into ordered, actionable steps.",
        payload=json.dumps(
            {"clauses": list(refined.clauses), "option": refined.option_applied.value},
            sort_keys=True,
        ),
    )
    response = gateway.invoke(request)
    return Plan(steps=tuple(response.content_doc()["steps"]))


def refine(
    current: Plan, feedback: Feedback, gateway: Gateway
) -> tuple[Plan, RefinementRecord]:
    """One refinement round; returns the next plan and its history record."""
    if current.final:
        raise PlanFinalError("plan is already approved", stage="refiner")
    if feedback.kind is FeedbackKind.APPROVE:
        record = RefinementRecord(
            iteration=current.iteration,
            feedback=feedback.text or "approve",
            plan_before=current.steps,
            plan_after=current.steps,
            approved=True,
        )
        return replace(current, final=True), record
    if current.iteration >= MAX_ITERATIONS:
        raise IterationLimitError(
            f"refinement limit of {MAX_ITERATIONS} iterations reached", stage="refiner"
        )
    request = AgentRequest(
        role=AgentRole.REFINER,
        instruction="Adjust the plan according to the feedback.",
        payload=json.dumps(
            {"feedback": feedback.text, "steps": list(current.steps)}, sort_keys=True
        ),
    )
    response = gateway.invoke(request)
    new_steps = tuple(response.content_doc()["steps"])
    record = RefinementRecord(
        iteration=current.iteration,
        feedback=feedback.text,
        plan_before=current.steps,
        plan_after=new_steps,
        approved=False,
    )
    return Plan(steps=new_steps, iteration=current.iteration + 1), record


def replay_history(records: list[RefinementRecord] | tuple[RefinementRecord, ...], gateway: Gateway) -> Plan:
    """Re-apply every recorded feedback from the initial plan; used for audits."""
    if not records:
        raise ValueError("empty history")
    current = Plan(steps=tuple(records[0].plan_before))
    for record in records:
        kind = FeedbackKind.APPROVE if record.approved else FeedbackKind.MODIFY
        current, _ = refine(current, Feedback(kind=kind, text=record.feedback), gateway)
    return current
