import pytest

from nlflow.entities import extract, materialize, upstream_index
from nlflow.errors import IndexMismatchError
from nlflow.model import CapsuleState, ContextKind, SourceKind, Step, Workflow
from nlflow.planner import Plan, plan
from nlflow.query import RawQuery, refine_query

REVIEW_STEPS = (
    "Review uploaded images from {website URL}",
    "Check the reviewed images if there are people present in them",
    "Download the results of the image review",
)


def workflow_for(steps):
    return Workflow(id="w1", title="t", steps=tuple(Step(index=i, text=t) for i, t in enumerate(steps)))


class TestExtract:
    def test_book_plan_entities(self, gw):
        book_plan = plan(
            refine_query(RawQuery(text="Please search for a specific book on Google and then buy it"), gw),
            gw,
        )
        entity_set = extract(book_plan, gw)
        labels = {l for r in entity_set.records for l in r.data_labels}
        assert {"book title", "search engine", "purchase platform"} <= labels

    def test_summarize_step(self, gw):
        entity_set = extract(Plan(steps=("Summarize recorded content into meeting minutes",)), gw)
        record = entity_set.records[0]
        assert record.action_verb == "Summarize"
        assert record.data_labels == ("recorded content",)
        assert record.context_phrases == ("into meeting minutes",)

    def test_bare_verb(self, gw):
        record = extract(Plan(steps=("Download",)), gw).records[0]
        assert record.action_verb == "Download"
        assert record.data_labels == ()
        assert record.context_phrases == ()

    def test_no_verb_found_is_per_step_issue(self, gw):
        entity_set = extract(Plan(steps=("Quarterly numbers to the dashboard",)), gw)
        record = entity_set.records[0]
        assert "no-verb-found" in record.issues
        # other steps still extract
        entity_set = extract(
            Plan(steps=("Quarterly numbers to the dashboard", "Download the report")), gw
        )
        assert entity_set.records[1].action_verb == "Download"

    def test_chunked_labels_appear_verbatim(self, gw):
        # Generic-path labels are literal substrings of the step text
        # (lexicon-typed labels like "book title" are canonical names instead).
        steps = (
            "Summarize recorded content into meeting minutes",
            "Review uploaded images from {website URL}",
            "Organize the paper into bullet points",
            "Download the results of the image review",
        )
        for record in extract(Plan(steps=steps), gw).records:
            for label in record.data_labels:
                assert label.lower() in steps[record.step_index].lower()

    def test_image_review_extraction(self, gw):
        entity_set = extract(Plan(steps=REVIEW_STEPS), gw)
        assert [r.data_labels for r in entity_set.records] == [
            ("website URL",),
            ("reviewed images",),
            ("results of the image review",),
        ]
        assert entity_set.records[1].context_phrases == ("if there are people present in them",)

    def test_task3_extraction(self, gw):
        refined = refine_query(
            RawQuery(text="Indicate O if there is a person and X if there is not on list website URL"),
            gw,
        )
        entity_set = extract(plan(refined, gw), gw)
        record = entity_set.records[0]
        assert record.action_verb == "Indicate"
        assert record.data_labels == ("website URL",)
        assert any("O" in c and "X" in c for c in record.context_phrases)


class TestMaterialize:
    def test_image_review_capsules(self, gw):
        entity_set = extract(Plan(steps=REVIEW_STEPS), gw)
        workflow = materialize(entity_set, workflow_for(REVIEW_STEPS))

        first = workflow.steps[0].data[0]
        assert first.label == "website URL" and first.state is CapsuleState.UNRESOLVED

        second = workflow.steps[1].data[0]
        assert second.state is CapsuleState.RESOLVED
        assert second.source.kind is SourceKind.STEP_OUTPUT and second.source.step_index == 0

        third = workflow.steps[2].data[0]
        assert third.source.step_index == 1

    def test_no_forward_references(self, gw):
        from nlflow.model import validate

        entity_set = extract(Plan(steps=REVIEW_STEPS), gw)
        workflow = materialize(entity_set, workflow_for(REVIEW_STEPS))
        assert validate(workflow).ok

    def test_step_without_data_has_no_capsules(self, gw):
        entity_set = extract(Plan(steps=("Download",)), gw)
        workflow = materialize(entity_set, workflow_for(("Download",)))
        assert workflow.steps[0].data == ()

    def test_context_kinds(self, gw):
        steps = ("Summarize recorded content into meeting minutes", "Send the results via email")
        workflow = materialize(extract(Plan(steps=steps), gw), workflow_for(steps))
        assert workflow.steps[0].context[0].kind is ContextKind.FORMAT
        assert workflow.steps[1].context[0].kind is ContextKind.DESTINATION

    def test_index_mismatch(self, gw):
        entity_set = extract(Plan(steps=REVIEW_STEPS), gw)
        with pytest.raises(IndexMismatchError):
            materialize(entity_set, workflow_for(REVIEW_STEPS[:2]))


class TestUpstreamIndex:
    def test_results_fall_back_to_previous_step(self):
        texts = ["Review the files", "Check the files", "Send the results via email"]
        assert upstream_index("results", 2, texts) == 1

    def test_external_labels_have_no_upstream(self):
        texts = ["Review uploaded images from {website URL}"]
        assert upstream_index("website URL", 0, texts) is None
        assert upstream_index("recorded content", 0, texts) is None

    def test_overlap_picks_nearest(self):
        texts = [
            "Review uploaded images from {website URL}",
            "Check the reviewed images if there are people present in them",
            "Download the results of the image review",
        ]
        assert upstream_index("reviewed images", 1, texts) == 0
        assert upstream_index("results of the image review", 2, texts) == 1
