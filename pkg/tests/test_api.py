import json
import threading
import time
from datetime import datetime, timezone

import pytest
from starlette.testclient import TestClient

from nlflow.api import create_app
from nlflow.model import (
    ActionBinding,
    ParamKind,
    ParamValue,
    Step,
    Workflow,
    WorkflowStatus,
    deserialize,
    serialize,
    validate,
)

REVIEW_PROMPT = (
    "I want to review uploaded images from the website, check if there are "
    "people in those images, and download the results."
)


@pytest.fixture
def client(engine):
    with TestClient(create_app(engine), raise_server_exceptions=False) as c:
        yield c


def echo_workflow_bytes(wf_id="echo-wf"):
    base = datetime(2026, 4, 1, tzinfo=timezone.utc)
    workflow = Workflow(
        id=wf_id, title="echo", status=WorkflowStatus.READY,
        steps=(
            Step(
                index=0, text="Echo the text",
                action=ActionBinding(
                    action_id="echo", verb="Echo", score=1.0,
                    parameters={"text": ParamValue(ParamKind.LITERAL, "hi")},
                ),
            ),
        ),
        created_at=base, updated_at=base,
    )
    return serialize(workflow)


def sse_events(client, run_id, last_event_id=None, headers=None):
    params = {}
    if last_event_id is not None:
        params["last_event_id"] = last_event_id
    out = []
    with client.stream("GET", f"/runs/{run_id}/events", params=params, headers=headers or {}) as r:
        assert r.status_code == 200
        assert r.headers["content-type"].startswith("text/event-stream")
        for line in r.iter_lines():
            if line.startswith("data: "):
                out.append(json.loads(line[len("data: "):]))
    return out


class TestSuggestionFlow:
    def test_suggest_apply_link_readiness(self, client, image_csv):
        r = client.post("/suggestions", json={"prompt": REVIEW_PROMPT})
        assert r.status_code == 200
        suggestion = r.json()
        assert len(suggestion["rendered_steps"]) == 3

        r = client.post(f"/suggestions/{suggestion['id']}/apply")
        assert r.status_code == 200
        workflow = r.json()
        assert workflow["status"] == "draft"

        # dropping the file flips the capsule and recomputes readiness
        r = client.post(
            f"/workflows/{workflow['id']}/data",
            json={"step": 0, "label": "website URL",
                  "source": {"kind": "file", "ref": str(image_csv)}},
        )
        assert r.status_code == 200
        updated = r.json()
        assert updated["status"] == "ready"
        capsule = updated["steps"][0]["data"][0]
        assert capsule["state"] == "resolved" and capsule["source"]["ref"] == str(image_csv)

    def test_apply_consumed_is_conflict(self, client):
        sid = client.post("/suggestions", json={"prompt": REVIEW_PROMPT}).json()["id"]
        assert client.post(f"/suggestions/{sid}/apply").status_code == 200
        r = client.post(f"/suggestions/{sid}/apply")
        assert r.status_code == 409
        assert r.json()["code"] == "suggestion_consumed"

    def test_stage_error_is_422(self, client):
        r = client.post("/suggestions", json={"prompt": "please"})
        assert r.status_code == 422
        assert r.json()["code"] == "empty_query"


class TestWorkflowEndpoints:
    def test_import_get_byte_identity(self, client):
        data = echo_workflow_bytes()
        r = client.post("/workflows", content=data)
        assert r.status_code == 200
        got = client.get("/workflows/echo-wf")
        assert got.content == data

    def test_import_invalid_is_400_with_report(self, client):
        doc = json.loads(echo_workflow_bytes())
        doc["steps"][0]["index"] = 3
        r = client.post("/workflows", content=json.dumps(doc))
        assert r.status_code == 400
        body = r.json()
        assert body["code"] == "validation_failed"
        assert any(v["rule"] == "non-contiguous indices" for v in body["details"])

    def test_unknown_ids_are_404(self, client):
        assert client.get("/workflows/nope").status_code == 404
        assert client.get("/runs/nope").status_code == 404
        assert client.post("/workflows/nope/run").status_code == 404
        assert client.delete("/workflows/nope").status_code == 404

    def test_delete(self, client):
        client.post("/workflows", content=echo_workflow_bytes("gone"))
        assert client.delete("/workflows/gone").status_code == 200
        assert client.get("/workflows/gone").status_code == 404

    def test_every_mutation_leaves_valid_state(self, client, engine, image_csv):
        sid = client.post("/suggestions", json={"prompt": REVIEW_PROMPT}).json()["id"]
        wf = client.post(f"/suggestions/{sid}/apply").json()
        client.post(
            f"/workflows/{wf['id']}/data",
            json={"step": 0, "label": "website URL",
                  "source": {"kind": "file", "ref": str(image_csv)}},
        )
        client.patch(f"/workflows/{wf['id']}/steps", json={"op": "add", "text": "send via email"})
        client.post(f"/workflows/{wf['id']}/refine", json={"feedback": "remove the download step"})
        for listed in client.get("/workflows").json():
            assert validate(deserialize(json.dumps(listed).encode())).ok


class TestPatchSteps:
    def apply_review_workflow(self, client):
        sid = client.post("/suggestions", json={"prompt": REVIEW_PROMPT}).json()["id"]
        return client.post(f"/suggestions/{sid}/apply").json()

    def test_reorder_creating_forward_reference_is_rejected(self, client):
        wf = self.apply_review_workflow(client)
        before = client.get(f"/workflows/{wf['id']}").content
        r = client.patch(
            f"/workflows/{wf['id']}/steps", json={"op": "reorder", "from": 1, "to": 0}
        )
        assert r.status_code == 400
        assert any(v["rule"] == "forward data reference" for v in r.json()["details"])
        assert client.get(f"/workflows/{wf['id']}").content == before  # unchanged

    def test_add_remove_edit(self, client):
        wf = self.apply_review_workflow(client)
        r = client.patch(
            f"/workflows/{wf['id']}/steps", json={"op": "add", "text": "send the results via email"}
        )
        assert r.status_code == 200
        assert len(r.json()["steps"]) == 4
        assert r.json()["steps"][3]["text"] == "Send the results via email"

        r = client.patch(f"/workflows/{wf['id']}/steps", json={"op": "remove", "step": 3})
        assert len(r.json()["steps"]) == 3

        r = client.patch(
            f"/workflows/{wf['id']}/steps",
            json={"op": "edit", "step": 2, "text": "download the results as a report"},
        )
        assert r.json()["steps"][2]["text"].startswith("Download the results")

    def test_bad_op_is_400(self, client):
        wf = self.apply_review_workflow(client)
        assert client.patch(f"/workflows/{wf['id']}/steps", json={"op": "zap"}).status_code == 400

    def test_candidates_and_manual_bind(self, client):
        wf = self.apply_review_workflow(client)
        r = client.get(f"/workflows/{wf['id']}/steps/2/candidates")
        assert r.status_code == 200
        candidates = r.json()["candidates"]
        sims = [c["similarity"] for c in candidates]
        assert sims == sorted(sims, reverse=True)
        assert any(c["action_id"] == "send_email" for c in candidates)

        r = client.patch(
            f"/workflows/{wf['id']}/steps",
            json={"op": "bind", "step": 2, "action_id": "send_email"},
        )
        assert r.status_code == 200
        assert r.json()["steps"][2]["action"]["action_id"] == "send_email"

        r = client.patch(
            f"/workflows/{wf['id']}/steps",
            json={"op": "bind", "step": 2, "action_id": "no_such_action"},
        )
        assert r.status_code == 404


class TestRefineEndpoint:
    def test_modify_then_approve(self, client):
        wf = TestPatchSteps().apply_review_workflow(client)
        r = client.post(
            f"/workflows/{wf['id']}/refine",
            json={"feedback": "replace download with send via email"},
        )
        assert r.status_code == 200
        doc = r.json()
        assert doc["steps"][2]["text"] == "Send the results via email"
        assert len(doc["refinement_history"]) == 1
        record = doc["refinement_history"][0]
        assert record["iteration"] == 0 and not record["approved"]

        r = client.post(f"/workflows/{wf['id']}/refine", json={"approve": True})
        assert r.json()["refinement_history"][-1]["approved"] is True

        r = client.post(f"/workflows/{wf['id']}/refine", json={"feedback": "remove review"})
        assert r.status_code == 422

    def test_uninterpretable_feedback_is_422(self, client):
        wf = TestPatchSteps().apply_review_workflow(client)
        r = client.post(f"/workflows/{wf['id']}/refine", json={"feedback": "be better"})
        assert r.status_code == 422
        assert r.json()["code"] == "uninterpretable_feedback"


class TestRunsAndEvents:
    def test_echo_run_streams_four_events(self, client):
        client.post("/workflows", content=echo_workflow_bytes())
        run = client.post("/workflows/echo-wf/run", params={"wait": "true"}).json()
        assert run["status"] == "succeeded"
        events = sse_events(client, run["id"])
        assert [e["seq"] for e in events] == [0, 1, 2, 3]
        assert [e["kind"] for e in events] == [
            "run_started", "step_started", "step_completed", "run_completed",
        ]

    def test_resume_replays_exact_suffix(self, client):
        client.post("/workflows", content=echo_workflow_bytes("resume-wf"))
        run = client.post("/workflows/resume-wf/run", params={"wait": "true"}).json()
        full = sse_events(client, run["id"])
        for n in range(len(full)):
            suffix = sse_events(client, run["id"], last_event_id=n)
            assert suffix == full[n + 1 :]
        header_suffix = sse_events(client, run["id"], headers={"Last-Event-ID": "1"})
        assert header_suffix == full[2:]

    def test_live_stream_sees_background_run(self, client, engine):
        client.post("/workflows", content=echo_workflow_bytes("live-wf"))
        run = client.post("/workflows/live-wf/run").json()
        events = sse_events(client, run["id"])  # polls until terminal
        assert events[-1]["kind"] == "run_completed"

    def test_concurrent_run_conflict(self, client, engine):
        from nlflow.executor import BUILTINS

        gate = threading.Event()

        def gated(params, ctx):
            gate.wait(timeout=5)
            return BUILTINS["echo"](params, ctx)

        BUILTINS["gated_echo"] = gated
        try:
            doc = json.loads(echo_workflow_bytes("busy-wf"))
            client.post("/workflows", content=json.dumps(doc))
            engine.pool.register(
                __import__("nlflow.actions", fromlist=["ActionDescriptor"]).ActionDescriptor(
                    id="echo", name="echo", description="Echo text.",
                    executor_config={"function": "gated_echo"},
                )
            )
            first = client.post("/workflows/busy-wf/run")
            assert first.status_code == 200
            second = client.post("/workflows/busy-wf/run")
            assert second.status_code == 409
            assert second.json()["code"] == "concurrent_run"
            gate.set()
            for _ in range(100):
                if client.get(f"/runs/{first.json()['id']}").json()["status"] != "running":
                    break
                time.sleep(0.02)
        finally:
            BUILTINS.pop("gated_echo", None)

    def test_run_not_ready_is_400(self, client):
        sid = client.post("/suggestions", json={"prompt": REVIEW_PROMPT}).json()["id"]
        wf = client.post(f"/suggestions/{sid}/apply").json()
        r = client.post(f"/workflows/{wf['id']}/run")
        assert r.status_code == 400
        assert any(v["rule"] == "unresolved step in ready workflow" for v in r.json()["details"])


class TestActionsEndpoints:
    def test_list_and_add(self, client):
        listed = client.get("/actions").json()
        assert any(a["id"] == "echo" for a in listed)
        manifest = {
            "id": "zz_custom",
            "name": "custom_probe",
            "description": "A custom probe action.",
            "parameter_schema": [],
            "executor_kind": "builtin",
            "executor_config": {"function": "echo"},
        }
        r = client.post("/actions", json=manifest)
        assert r.status_code == 200
        assert any(a["id"] == "zz_custom" for a in client.get("/actions").json())

    def test_bad_manifest_is_400(self, client):
        r = client.post("/actions", json={"id": "x"})
        assert r.status_code == 400


class TestScheduleEndpoint:
    def test_schedule_and_unschedule(self, client):
        client.post("/workflows", content=echo_workflow_bytes("sched-wf"))
        r = client.post(
            "/workflows/sched-wf/schedule",
            json={"expression": "weekly wed@09:00", "timezone": "America/New_York"},
        )
        assert r.status_code == 200
        sched = r.json()["schedule"]
        assert sched["expression"] == "weekly wed@09:00"
        r = client.delete("/workflows/sched-wf/schedule")
        assert r.json()["schedule"] is None

    def test_invalid_expression_is_422(self, client):
        client.post("/workflows", content=echo_workflow_bytes("sched-bad"))
        r = client.post(
            "/workflows/sched-bad/schedule",
            json={"expression": "whenever", "timezone": "UTC"},
        )
        assert r.status_code == 422
        assert r.json()["code"] == "invalid_expression"
