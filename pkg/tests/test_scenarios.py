"""Whole-task scenarios: a prompt grows into a multi-step chain, data flows
forward implicitly, and runs deliver real artifacts (files, outbox email)."""

import json
import time
from datetime import timedelta, timezone

from nlflow.executor import RunStatus
from nlflow.model import CapsuleState, DataSource, SourceKind, WorkflowStatus, utcnow


def wait_terminal(engine, run_id, timeout=5.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        doc = engine.get_run(run_id)
        if doc["status"] != RunStatus.RUNNING.value:
            return doc
        time.sleep(0.02)
    raise AssertionError(f"run {run_id} never finished")


class TestMeetingMinutesTask:
    """Summarize a recording, organize it, and send the result by email."""

    def test_chain_builds_runs_and_delivers_email(self, engine, tmp_path):
        transcript = tmp_path / "recording_transcript.txt"
        transcript.write_text(
            "We agreed to ship the beta on Friday. Ana owns the release notes. "
            "Finance needs the budget sheet by Tuesday. Next sync is on Monday.",
            encoding="utf-8",
        )

        suggestion = engine.suggestions.suggest("Summarize recorded content into meeting minutes")
        assert len(suggestion.rendered_steps) == 1
        workflow = engine.suggestions.apply(suggestion.id)
        assert workflow.steps[0].action.action_id == "summarize"

        workflow = engine.attach_data(
            workflow.id, 0, "recorded content", DataSource.file(str(transcript))
        )
        workflow = engine.patch_steps(
            workflow.id, {"op": "add", "text": "Organize by tasks and schedule"}
        )
        workflow = engine.patch_steps(workflow.id, {"op": "add", "text": "Send via email"})

        assert [s.action.action_id for s in workflow.steps] == [
            "summarize", "organize_content", "send_email",
        ]
        # Later steps feed from the chain, so the workflow is ready to run.
        assert workflow.status is WorkflowStatus.READY
        organize = workflow.steps[1]
        assert any(
            c.source is not None and c.source.kind is SourceKind.STEP_OUTPUT
            for c in organize.data
        )

        run = engine.run_workflow(workflow.id, background=False)
        assert run.status is RunStatus.SUCCEEDED

        outbox = sorted((engine.store.root / "outbox").glob("*.eml"))
        assert len(outbox) == 1
        message = outbox[0].read_text()
        assert message.startswith("To: ")
        assert "ship the beta" in message  # summarized content made it through

    def test_summary_output_is_the_truncation(self, engine, tmp_path):
        transcript = tmp_path / "t.txt"
        transcript.write_text("One. Two. Three. Four.", encoding="utf-8")
        suggestion = engine.suggestions.suggest("Summarize recorded content into meeting minutes")
        workflow = engine.suggestions.apply(suggestion.id)
        workflow = engine.attach_data(
            workflow.id, 0, "recorded content", DataSource.file(str(transcript))
        )
        run = engine.run_workflow(workflow.id, background=False)
        text = engine.store.resolve_ref(run.step_results[0].value_ref).read_text()
        assert text == "One. Two.\n"


class TestImageAuditTask:
    """Flag person images O/X from a URL list, email it, run it every Wednesday."""

    def test_flag_email_and_weekly_schedule(self, engine, image_csv):
        suggestion = engine.suggestions.suggest(
            "Indicate O if there is a person and X if there is not on list website URL"
        )
        workflow = engine.suggestions.apply(suggestion.id)
        assert workflow.steps[0].action.action_id == "detect_people"

        workflow = engine.attach_data(
            workflow.id, 0, "website URL", DataSource.file(str(image_csv))
        )
        workflow = engine.patch_steps(workflow.id, {"op": "add", "text": "Send via email"})
        assert workflow.status is WorkflowStatus.READY

        scheduled = engine.scheduler.schedule(
            workflow.id, "weekly wed@09:00", "America/New_York"
        )
        local = scheduled.schedule.next_fire
        assert (local.hour, local.minute) == (9, 0)
        assert local.astimezone(timezone.utc) > utcnow()

        # Pretend the Wednesday window passed; the tick fires exactly one run.
        late = scheduled.schedule.next_fire + timedelta(minutes=5)
        started = engine.scheduler.tick(late)
        assert len(started) == 1
        doc = wait_terminal(engine, started[0])
        assert doc["status"] == RunStatus.SUCCEEDED.value

        flags_ref = doc["step_results"][0]["value_ref"]
        table = json.loads(engine.store.resolve_ref(flags_ref).read_text())
        assert [row["flag"] for row in table] == ["O", "X", "O", "X"]
        assert list((engine.store.root / "outbox").glob("*.eml"))

        after = engine.get_workflow(workflow.id)
        assert after.schedule.next_fire.astimezone(timezone.utc) > late.astimezone(timezone.utc)


class TestDocumentPrepTask:
    """Organize a paper into bullets, translate it, and download the result."""

    def test_translate_chain_produces_download(self, engine, tmp_path):
        paper_file = tmp_path / "draft.txt"
        paper_file.write_text("hello meeting\nhello again", encoding="utf-8")

        suggestion = engine.suggestions.suggest("Organize the paper into bullet points")
        workflow = engine.suggestions.apply(suggestion.id)
        label = workflow.steps[0].data[0].label
        workflow = engine.attach_data(workflow.id, 0, label, DataSource.file(str(paper_file)))
        workflow = engine.patch_steps(workflow.id, {"op": "add", "text": "Translate to Korean"})
        workflow = engine.patch_steps(workflow.id, {"op": "add", "text": "Download"})

        translate_step = workflow.steps[1]
        assert translate_step.action.action_id == "translate"
        # target language recovered from the "to Korean" context annotation
        assert translate_step.action.parameters["target language"].value == "Korean"
        assert workflow.status is WorkflowStatus.READY

        run = engine.run_workflow(workflow.id, background=False)
        assert run.status is RunStatus.SUCCEEDED
        translated = engine.store.resolve_ref(run.step_results[1].value_ref).read_text()
        assert translated.startswith("[ko]")
        assert "안녕하세요" in translated
        download = run.step_results[2]
        assert download.kind.value == "file"
