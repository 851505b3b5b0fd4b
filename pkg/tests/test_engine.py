import json
import random
import time

from nlflow.executor import BUILTINS, RunStatus
from nlflow.model import (
    ActionBinding,
    CapsuleState,
    DataSource,
    ParamKind,
    ParamValue,
    SourceKind,
    Step,
    Workflow,
    WorkflowStatus,
    serialize,
    validate,
)
from nlflow.planner import Feedback, FeedbackKind

from conftest import random_workflow

REVIEW_PROMPT = (
    "I want to review uploaded images from the website, check if there are "
    "people in those images, and download the results."
)


def applied_review_workflow(engine, image_csv=None):
    suggestion = engine.suggestions.suggest(REVIEW_PROMPT)
    workflow = engine.suggestions.apply(suggestion.id)
    if image_csv is not None:
        workflow = engine.attach_data(
            workflow.id, 0, "website URL", DataSource.file(str(image_csv))
        )
    return workflow


class TestRefinementPreservesLinks:
    def test_linked_capsule_survives_unrelated_edit(self, engine, image_csv):
        workflow = applied_review_workflow(engine, image_csv)
        assert workflow.status is WorkflowStatus.READY

        updated = engine.refine_workflow(
            workflow.id,
            Feedback(kind=FeedbackKind.MODIFY, text="replace download with send via email"),
        )
        capsule = updated.steps[0].data[0]
        assert capsule.label == "website URL"
        assert capsule.state is CapsuleState.RESOLVED
        assert capsule.source.ref == str(image_csv)
        # The new step feeds from the previous step's output.
        send_step = updated.steps[2]
        assert send_step.text == "Send the results via email"
        assert send_step.data[0].source.kind is SourceKind.STEP_OUTPUT
        assert validate(updated).ok

    def test_removing_a_dependency_unresolves_consumers(self, engine):
        workflow = applied_review_workflow(engine)
        removed = engine.patch_steps(workflow.id, {"op": "remove", "step": 0})
        check_step = removed.steps[0]
        assert check_step.text.startswith("Check")
        # Its upstream source is gone, so the capsule goes red again.
        assert all(c.state is CapsuleState.UNRESOLVED for c in check_step.data)
        assert removed.status is WorkflowStatus.DRAFT
        assert validate(removed).ok


class TestConcurrentDistinctRuns:
    def test_distinct_workflows_run_in_parallel(self, engine, tmp_path):
        gate_seen = []

        def observing_sleep(params, ctx):
            gate_seen.append(ctx.run_id)
            return BUILTINS["sleep"]({"seconds": "0.3"}, ctx)

        BUILTINS["observing_sleep"] = observing_sleep
        try:
            engine.add_action(
                {"id": "pause", "name": "pause", "description": "Pause briefly.",
                 "parameter_schema": [], "executor_kind": "builtin",
                 "executor_config": {"function": "observing_sleep"}}
            )
            runs = []
            for i in range(2):
                workflow = Workflow(
                    id=f"par-{i}", title=f"parallel {i}", status=WorkflowStatus.READY,
                    steps=(Step(index=0, text="Pause for a moment",
                                action=ActionBinding(action_id="pause", verb="Pause", score=1.0)),),
                )
                engine.store.save_workflow(workflow)
                runs.append(engine.run_workflow(workflow.id, background=True))

            deadline = time.monotonic() + 0.25
            overlapped = False
            while time.monotonic() < deadline:
                statuses = [engine.get_run(r.id)["status"] for r in runs]
                if statuses == ["running", "running"]:
                    overlapped = True
                    break
                time.sleep(0.01)
            assert overlapped, "distinct workflows should execute concurrently"

            for r in runs:
                for _ in range(200):
                    if engine.get_run(r.id)["status"] != RunStatus.RUNNING.value:
                        break
                    time.sleep(0.02)
                assert engine.get_run(r.id)["status"] == RunStatus.SUCCEEDED.value
        finally:
            BUILTINS.pop("observing_sleep", None)


class TestRunningWorkflowIsImmutable:
    def test_mutations_conflict_while_running(self, engine):
        import threading

        import pytest

        from nlflow.errors import ConcurrentRunError
        from nlflow.executor import BUILTINS
        from nlflow.model import ActionBinding, Step, Workflow, WorkflowStatus
        from nlflow.planner import Feedback, FeedbackKind

        gate = threading.Event()

        def gated(params, ctx):
            gate.wait(timeout=5)
            return BUILTINS["echo"]({"text": "done"}, ctx)

        BUILTINS["gated_hold"] = gated
        try:
            engine.add_action(
                {"id": "hold", "name": "hold", "description": "Hold until released.",
                 "parameter_schema": [], "executor_kind": "builtin",
                 "executor_config": {"function": "gated_hold"}}
            )
            workflow = Workflow(
                id="busy", title="busy", status=WorkflowStatus.READY,
                steps=(Step(index=0, text="Hold the line",
                            action=ActionBinding(action_id="hold", verb="Hold", score=1.0)),),
            )
            engine.store.save_workflow(workflow)
            run = engine.run_workflow(workflow.id, background=True)

            for _ in range(100):
                if engine.get_workflow(workflow.id).status is WorkflowStatus.RUNNING:
                    break
                time.sleep(0.01)

            with pytest.raises(ConcurrentRunError):
                engine.patch_steps(workflow.id, {"op": "add", "text": "send via email"})
            with pytest.raises(ConcurrentRunError):
                engine.refine_workflow(
                    workflow.id, Feedback(kind=FeedbackKind.MODIFY, text="remove hold")
                )
            with pytest.raises(ConcurrentRunError):
                engine.delete_workflow(workflow.id)

            gate.set()
            wait_doc = None
            for _ in range(200):
                wait_doc = engine.get_run(run.id)
                if wait_doc["status"] != "running":
                    break
                time.sleep(0.02)
            assert wait_doc["status"] == "succeeded"
            # After the run finishes the workflow is editable again.
            engine.patch_steps(workflow.id, {"op": "add", "text": "send via email"})
        finally:
            BUILTINS.pop("gated_hold", None)


class TestUpstreamReferenceInvariant:
    def test_accepted_workflows_only_reference_backward(self):
        rng = random.Random(31)
        for _ in range(50):
            workflow = random_workflow(rng)
            if not validate(workflow).ok:
                continue
            for step in workflow.steps:
                for capsule in step.data:
                    src = capsule.source
                    if src is not None and src.kind is SourceKind.STEP_OUTPUT:
                        assert src.step_index < step.index

    def test_runtime_guard_rejects_forward_parameter(self, engine):
        # A binding pointing at its own step's output is caught at run time
        # even though capsule-level validation cannot see binding parameters.
        workflow = Workflow(
            id="fwd-param", title="forward", status=WorkflowStatus.READY,
            steps=(
                Step(index=0, text="Echo the text",
                     action=ActionBinding(
                         action_id="echo", verb="Echo", score=1.0,
                         parameters={"text": ParamValue(ParamKind.STEP_OUTPUT, 0)},
                     )),
            ),
        )
        engine.store.save_workflow(workflow)
        run = engine.run_workflow(workflow.id, background=False)
        assert run.status is RunStatus.FAILED
        events = engine.executor.events(run.id)
        assert events[-1].kind.value == "run_failed"
        failed = next(e for e in events if e.kind.value == "step_failed")
        assert "cannot read output" in failed.payload


class TestImportedDocumentsStayCanonical:
    def test_engine_import_rejects_invalid_and_upserts_valid(self, engine):
        rng = random.Random(77)
        workflow = random_workflow(rng)
        data = serialize(workflow)
        imported = engine.import_workflow(data)
        assert imported == workflow
        # Upsert: importing the same bytes again is idempotent.
        assert engine.import_workflow(data) == workflow
        doc = json.loads(data)
        doc["steps"] = doc["steps"][::-1] if len(doc["steps"]) > 1 else doc["steps"]
        if len(doc["steps"]) > 1:
            import pytest

            from nlflow.errors import ValidationFailedError

            with pytest.raises(ValidationFailedError):
                engine.import_workflow(json.dumps(doc).encode())
