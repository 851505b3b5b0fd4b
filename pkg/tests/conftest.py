"""Shared fixtures: offline gateway, engines over temp dirs, random generators."""

from __future__ import annotations

import random
import string
from datetime import datetime, timedelta, timezone

import pytest

from nlflow import recurrence
from nlflow.actions import ActionDescriptor, ActionPool, ParameterSpec
from nlflow.engine import Engine, build_engine
from nlflow.gateway import Gateway
from nlflow.model import (
    ActionBinding,
    CapsuleState,
    ContextAnnotation,
    ContextKind,
    DataCapsule,
    DataSource,
    RefinementRecord,
    Schedule,
    Step,
    Workflow,
    WorkflowStatus,
)
from nlflow.rulebased import RuleBasedProvider

WORDS = (
    "report image table summary invoice record customer order note chart "
    "email file archive backup survey draft ticket review result dataset"
).split()

VERBS = "review check download send summarize translate organize fetch read filter".split()


@pytest.fixture
def gw() -> Gateway:
    gateway = Gateway()
    gateway.register_all(RuleBasedProvider())
    return gateway


@pytest.fixture
def engine(tmp_path) -> Engine:
    return build_engine(tmp_path / "data")


@pytest.fixture
def image_csv(tmp_path):
    path = tmp_path / "image_links.csv"
    path.write_text(
        "url\n"
        "https://img.example/person1.jpg\n"
        "https://img.example/cat.jpg\n"
        "https://img.example/people_group.jpg\n"
        "https://img.example/landscape.jpg\n",
        encoding="utf-8",
    )
    return path


def make_pool(rng: random.Random, size: int) -> ActionPool:
    """Random fixture pool with unique ids and short descriptions."""
    actions = []
    for i in range(size):
        verb = rng.choice(VERBS)
        words = rng.sample(WORDS, k=rng.randint(2, 5))
        actions.append(
            ActionDescriptor(
                id=f"act{i:04d}",
                name=f"{verb}_{words[0]}",
                description=f"{verb.capitalize()} the {' '.join(words)}.",
            )
        )
    return ActionPool(actions)


def random_step_text(rng: random.Random) -> str:
    verb = rng.choice(VERBS).capitalize()
    words = rng.sample(WORDS, k=rng.randint(1, 3))
    return f"{verb} the {' '.join(words)}"


def random_workflow(rng: random.Random) -> Workflow:
    """A structurally valid workflow with capsules, bindings and history."""
    k = rng.randint(1, 5)
    base = datetime(2026, 3, 1, 12, 0, tzinfo=timezone.utc) + timedelta(minutes=rng.randint(0, 100000))
    steps = []
    for i in range(k):
        capsules = []
        for c in range(rng.randint(0, 3)):
            label = f"{rng.choice(WORDS)} {c}"
            choice = rng.random()
            if choice < 0.3:
                capsules.append(DataCapsule(label=label))
            elif choice < 0.55:
                capsules.append(
                    DataCapsule(label=label, state=CapsuleState.RESOLVED,
                                source=DataSource.file(f"/data/{rng.choice(WORDS)}.csv"))
                )
            elif choice < 0.75 or i == 0:
                capsules.append(
                    DataCapsule(label=label, state=CapsuleState.RESOLVED,
                                source=DataSource.url(f"https://example.com/{rng.choice(WORDS)}"))
                )
            else:
                capsules.append(
                    DataCapsule(label=label, state=CapsuleState.RESOLVED,
                                source=DataSource.step_output(rng.randrange(i)))
                )
        action = None
        if rng.random() < 0.8:
            action = ActionBinding(
                action_id=f"act{rng.randint(0, 99):04d}",
                verb=rng.choice(VERBS),
                score=round(rng.uniform(-1.0, 1.35), 6),
                parameters={},
            )
        context = tuple(
            ContextAnnotation(text=f"via {rng.choice(WORDS)}", kind=rng.choice(list(ContextKind)))
            for _ in range(rng.randint(0, 2))
        )
        steps.append(Step(index=i, text=random_step_text(rng), data=tuple(capsules),
                          action=action, context=context))

    history = []
    plan_texts = [s.text for s in steps]
    n_records = rng.randint(0, 3)
    for n in range(n_records):
        before = list(plan_texts)
        plan_texts = before + [random_step_text(rng)]
        history.append(
            RefinementRecord(iteration=n, feedback=f"add {plan_texts[-1].lower()}",
                             plan_before=tuple(before), plan_after=tuple(plan_texts), approved=False)
        )
    if history and rng.random() < 0.4:
        history.append(
            RefinementRecord(iteration=len(history), feedback="approve",
                             plan_before=tuple(plan_texts), plan_after=tuple(plan_texts),
                             approved=True)
        )

    schedule = None
    if rng.random() < 0.35:
        expression = rng.choice(["daily@09:00", "weekly wed@09:00", "*/15 * * * *"])
        schedule = Schedule(
            expression=expression,
            timezone="America/New_York",
            next_fire=recurrence.next_fire(expression, "America/New_York", base),
        )

    fully = all(s.fully_resolved for s in steps)
    status = WorkflowStatus.READY if (fully and rng.random() < 0.5) else WorkflowStatus.DRAFT
    return Workflow(
        id=f"wf{rng.randrange(16**10):010x}",
        title=" ".join(rng.sample(WORDS, k=3)),
        steps=tuple(steps),
        status=status,
        schedule=schedule,
        refinement_history=tuple(history),
        created_at=base,
        updated_at=base + timedelta(seconds=rng.randint(0, 3600)),
    )
