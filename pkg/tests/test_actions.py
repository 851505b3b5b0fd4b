import hashlib
import random
import re
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlflow.actions import (
    ActionDescriptor,
    ActionPool,
    EMBEDDING_DIM,
    ParameterSpec,
    embed_text,
    load_manifest_doc,
    map_action,
    retrieve,
)
from nlflow.errors import EmptyPoolError, EmptyTextError, ParseError
from nlflow.model import CapsuleState, DataCapsule, DataSource, Step
from nlflow.rulebased import PARAM_MATCH_BONUS, VERB_MATCH_BONUS, rank_mapping_candidates

from conftest import make_pool, random_step_text


def oracle_counts(text: str, dim: int = EMBEDDING_DIM) -> list[int]:
    """Independent reimplementation of the hashed bag-of-words contract."""
    counts = [0] * dim
    for token in re.findall(r"[a-z0-9]+", text.lower()):
        digest = hashlib.blake2b(token.encode(), digest_size=8).digest()
        counts[int.from_bytes(digest, "big") % dim] += 1
    return counts


def oracle_cosine(a: list[int], b: list[int]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na2 = sum(x * x for x in a)
    nb2 = sum(y * y for y in b)
    if dot == 0:
        return 0.0
    # exact value of dot^2/(|a|^2 |b|^2), signed square root at the end
    ratio = Fraction(dot * dot, na2 * nb2)
    return float(ratio) ** 0.5


def oracle_rank(query: str, actions: list[ActionDescriptor]) -> list[str]:
    """Exact integer ranking: compare squared similarities cross-multiplied."""
    q = oracle_counts(query)
    data = []
    for action in actions:
        a = oracle_counts(f"{action.name.replace('_', ' ')} {action.description}")
        dot = sum(x * y for x, y in zip(a, q))
        norm2 = sum(x * x for x in a)
        data.append((action.id, dot, norm2))

    import functools

    def compare(x, y):
        # sim_x > sim_y  <=>  dot_x^2 * norm2_y > dot_y^2 * norm2_x  (dots >= 0)
        lhs = x[1] * x[1] * y[2]
        rhs = y[1] * y[1] * x[2]
        if lhs != rhs:
            return -1 if lhs > rhs else 1
        return -1 if x[0] < y[0] else (1 if x[0] > y[0] else 0)

    return [d[0] for d in sorted(data, key=functools.cmp_to_key(compare))]


class TestEmbed:
    def test_deterministic(self):
        a = embed_text("send the quarterly report")
        b = embed_text("send the quarterly report")
        assert np.array_equal(a, b)

    def test_unit_norm_and_self_similarity(self):
        v = embed_text("send email")
        assert abs(float(v @ v) - 1.0) <= 1e-9
        assert abs(np.linalg.norm(v) - 1.0) <= 1e-6

    def test_empty_text_rejected(self):
        with pytest.raises(EmptyTextError):
            embed_text("   !!! ")

    def test_pairwise_cosine_matches_exact_oracle(self):
        rng = random.Random(11)
        texts = [random_step_text(rng) + f" variant {i}" for i in range(20)]
        vectors = [embed_text(t) for t in texts]
        counts = [oracle_counts(t) for t in texts]
        for i in range(20):
            for j in range(20):
                got = float(vectors[i] @ vectors[j])
                want = oracle_cosine(counts[i], counts[j])
                assert abs(got - want) <= 1e-12, (texts[i], texts[j])


class TestRetrieve:
    def test_singleton_pool(self):
        pool = ActionPool([ActionDescriptor(id="only", name="echo_text", description="Echo text.")])
        result = retrieve("Anything at all", pool)
        assert [c.action_id for c in result.candidates] == ["only"]

    def test_default_k_is_ten(self):
        rng = random.Random(3)
        pool = make_pool(rng, 40)
        result = retrieve("Send the results via email", pool)
        assert len(result.candidates) == 10

    def test_ranking_matches_bruteforce_oracle(self):
        rng = random.Random(5)
        pool = make_pool(rng, 20)
        got = [c.action_id for c in retrieve("Send the results via email", pool, k=20).candidates]
        want = oracle_rank("Send the results via email", pool.snapshot())
        assert got == want

    def test_candidates_sorted_and_tiebroken(self):
        # Identical descriptions force exact ties; ascending id must win.
        actions = [
            ActionDescriptor(id=f"dup{i}", name="send_email", description="Send the report.")
            for i in range(5)
        ]
        pool = ActionPool(actions)
        result = retrieve("send the report", pool, k=5)
        assert [c.action_id for c in result.candidates] == [f"dup{i}" for i in range(5)]
        sims = [c.similarity for c in result.candidates]
        assert sims == sorted(sims, reverse=True)

    def test_empty_pool_rejected(self):
        with pytest.raises(EmptyPoolError):
            retrieve("anything", ActionPool())

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=1, max_value=200), st.integers())
    def test_property_matches_oracle_up_to_200(self, size, seed):
        rng = random.Random(seed)
        pool = make_pool(rng, size)
        query = random_step_text(rng)
        got = [c.action_id for c in retrieve(query, pool, k=10).candidates]
        want = oracle_rank(query, pool.snapshot())[: min(10, size)]
        assert got == want

    def test_adding_action_preserves_relative_order(self):
        rng = random.Random(9)
        pool = make_pool(rng, 30)
        query = "Review the uploaded images"
        before = [c.action_id for c in retrieve(query, pool, k=30).candidates]
        pool.register(ActionDescriptor(id="zzz_new", name="review_images", description="Review images."))
        after = [c.action_id for c in retrieve(query, pool, k=31).candidates]
        after_without_new = [a for a in after if a != "zzz_new"]
        assert after_without_new == before


def fixture_candidates(pool, step_text):
    return retrieve(step_text, pool, k=10)


class TestMapAction:
    def make_three_candidate_pool(self):
        return ActionPool(
            [
                ActionDescriptor(
                    id="detect_people",
                    name="detect_people",
                    description="Check images for people. Detects whether there are people present in them.",
                    parameter_schema=(ParameterSpec(label="images", required=True, kind="table"),),
                ),
                ActionDescriptor(
                    id="image_resize",
                    name="resize_image",
                    description="Resize an image file to the given dimensions.",
                    parameter_schema=(ParameterSpec(label="image", required=True, kind="file"),),
                ),
                ActionDescriptor(
                    id="send_email",
                    name="send_email",
                    description="Send content via email to a recipient.",
                    parameter_schema=(ParameterSpec(label="to", required=False, kind="text"),),
                ),
            ]
        )

    def check_people_step(self):
        return Step(
            index=1,
            text="Check the reviewed images if there are people present in them",
            data=(
                DataCapsule(
                    label="reviewed images",
                    state=CapsuleState.RESOLVED,
                    source=DataSource.step_output(0),
                ),
            ),
        )

    def test_person_detection_selected_with_hand_computed_scores(self):
        pool = self.make_three_candidate_pool()
        step = self.check_people_step()
        candidates = fixture_candidates(pool, step.text)

        # Independent score computation per the published formula.
        scores = {}
        for cand in candidates.candidates:
            action = pool.get(cand.action_id)
            verb_bonus = VERB_MATCH_BONUS if action.name.split("_")[0] == "check" else 0.0
            required = [p.label for p in action.parameter_schema if p.required]
            if not required:
                coverage = 1.0
            else:
                # "images" is satisfiable from the "reviewed images" capsule.
                satisfied = sum(1 for label in required if label in ("images",))
                coverage = satisfied / len(required)
            scores[action.id] = cand.similarity + verb_bonus + PARAM_MATCH_BONUS * coverage
        oracle_best = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        assert oracle_best == "detect_people"  # frozen golden

        result = map_action(step, candidates, "Check", pool)
        assert result.binding.action_id == "detect_people"
        assert abs(result.binding.score - scores["detect_people"]) <= 1e-12
        assert result.binding.parameters["images"].value == 0
        assert result.missing_required == ()

    def test_single_candidate_binds(self):
        pool = ActionPool([ActionDescriptor(id="only", name="echo_text", description="Echo.")])
        step = Step(index=0, text="Echo the text")
        result = map_action(step, retrieve(step.text, pool), "Echo", pool)
        assert result.binding.action_id == "only"

    def test_equal_scores_tie_break_to_lower_id(self):
        payload = {
            "action_verb": "send",
            "candidates": [
                {"action_id": "bbb", "name": "send_email", "similarity": 0.5, "required": [], "satisfiable": []},
                {"action_id": "aaa", "name": "send_email", "similarity": 0.5, "required": [], "satisfiable": []},
            ],
        }
        assert rank_mapping_candidates(payload) == "aaa"

    def test_missing_required_parameters_reported(self):
        pool = ActionPool(
            [
                ActionDescriptor(
                    id="translate",
                    name="translate",
                    description="Translate text into a target language.",
                    parameter_schema=(
                        ParameterSpec(label="text", required=True, kind="text"),
                        ParameterSpec(label="target language", required=True, kind="text"),
                    ),
                )
            ]
        )
        step = Step(index=0, text="Translate the memo")
        result = map_action(step, retrieve(step.text, pool), "Translate", pool)
        assert set(result.missing_required) == {"text", "target language"}

    def test_argmax_invariant_under_constant_shift(self):
        rng = random.Random(42)
        for _ in range(1000):
            n = rng.randint(2, 8)
            sims = [round(rng.uniform(-1, 1), 6) for _ in range(n)]
            shift = round(rng.uniform(-5, 5), 3)
            ids = [f"c{i:02d}" for i in range(n)]
            rng.shuffle(ids)

            def payload(extra):
                return {
                    "action_verb": "",
                    "candidates": [
                        {
                            "action_id": ids[i],
                            "name": "other_thing",
                            "similarity": sims[i] + extra,
                            "required": [],
                            "satisfiable": [],
                        }
                        for i in range(n)
                    ],
                }

            assert rank_mapping_candidates(payload(0.0)) == rank_mapping_candidates(payload(shift))

    def test_score_within_documented_range(self):
        rng = random.Random(17)
        pool = make_pool(rng, 25)
        step = Step(index=0, text="Send the weekly report via email")
        result = map_action(step, retrieve(step.text, pool), "Send", pool)
        assert -1.0 <= result.binding.score <= 1.0 + VERB_MATCH_BONUS + PARAM_MATCH_BONUS


class TestManifests:
    def test_load_validates_kinds(self):
        with pytest.raises(ParseError):
            load_manifest_doc({"id": "x", "name": "x", "description": "d", "executor_kind": "magic"})
        with pytest.raises(ParseError):
            load_manifest_doc(
                {
                    "id": "x",
                    "name": "x",
                    "description": "d",
                    "parameter_schema": [{"label": "p", "kind": "blob"}],
                }
            )
        with pytest.raises(ParseError):
            load_manifest_doc({"name": "x", "description": "d"})

    def test_embedding_is_unit_norm_on_load(self):
        action = load_manifest_doc({"id": "a", "name": "do_thing", "description": "Does a thing."})
        assert abs(np.linalg.norm(action.embedding) - 1.0) <= 1e-6
