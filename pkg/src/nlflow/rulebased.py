"""Deterministic rule-based provider for every agent role.

This is a first-class engine, not a test mock: clause segmentation, slot
canonicalization, anaphora elaboration, noun-phrase chunking and a small
feedback-edit grammar. Same request in, same response out, always.
"""

from __future__ import annotations

import json
import re

from . import textops
from .errors import EmptyQueryError, UninterpretableFeedbackError
from .gateway import AgentRequest, AgentRole, ProviderKind

# Prepositions that introduce an in-sentence data source.
_SOURCE_PREPS = {"from", "on", "at", "in"}
# Prepositions that open a trailing modifier phrase.
_PHRASE_PREPS = {"from", "into", "to", "on", "at", "in", "with", "via", "as", "by"}

_CHECK_ANAPHOR = re.compile(
    r"^check if there (is|are) (.+?) in (?:those|these) (\w+)$", re.IGNORECASE
)
_BARE_RESULTS = re.compile(r"^(\w+) the results$", re.IGNORECASE)
_PRONOUN_OBJECT = re.compile(r"^(\w+) (?:it|them)$", re.IGNORECASE)

_EDIT_REPLACE = re.compile(
    r"^(?:please\s+)?replace\s+(?:the\s+)?(?:step\s+)?['\"]?(.+?)['\"]?(?:\s+step|\s+node)?\s+with\s+(.+)$",
    re.IGNORECASE,
)
_EDIT_REMOVE = re.compile(
    r"^(?:please\s+)?(?:remove|delete|drop)\s+(?:the\s+)?['\"]?(.+?)['\"]?(?:\s+step|\s+node)?$",
    re.IGNORECASE,
)
_EDIT_APPEND = re.compile(
    r"^(?:please\s+)?(?:append|add)\s+(?:a\s+step\s+to\s+|a\s+|an\s+)?['\"]?(.+?)['\"]?(?:\s+step|\s+node)?(?:\s+at\s+the\s+end)?$",
    re.IGNORECASE,
)
_EDIT_REORDER = re.compile(
    r"^(?:please\s+)?(?:move|reorder)\s+step\s+(\d+)\s+to\s+(?:position\s+|step\s+)?(\d+)$",
    re.IGNORECASE,
)
_EDIT_REPLACE_INDEX = re.compile(
    r"^(?:please\s+)?replace\s+step\s+(\d+)\s+with\s+(.+)$", re.IGNORECASE
)


def normalize_query(text: str) -> str:
    """Whitespace, politeness-marker and first-letter casing normalization."""
    out = textops.strip_fillers(text)
    return textops.capitalize_first(out)


class RuleBasedProvider:
    """Pure function of the request for all five roles."""

    kind = ProviderKind.RULE_BASED

    def complete(self, request: AgentRequest) -> str:
        payload = request.payload_doc()
        if request.role is AgentRole.QUERY_PROCESSOR:
            result = self._process_query(payload)
        elif request.role is AgentRole.PLANNER:
            result = {"steps": plan_steps(payload["clauses"])}
        elif request.role is AgentRole.ENTITY_EXTRACTOR:
            result = {"entities": extract_entities(payload["steps"])}
        elif request.role is AgentRole.MAPPER:
            result = {"action_id": rank_mapping_candidates(payload)}
        elif request.role is AgentRole.REFINER:
            result = self._refine(payload)
        else:  # pragma: no cover - enum is closed
            raise ValueError(f"unknown role {request.role}")
        return json.dumps(result, sort_keys=True, ensure_ascii=False)

    # -- query processing ---------------------------------------------------

    def _process_query(self, payload: dict) -> dict:
        text, option = payload["text"], payload["option"]
        base = normalize_query(text)
        if not base:
            raise EmptyQueryError(
                "query is empty after normalization", stage="query_processor"
            )
        if option == "decomposition":
            clauses = [
                c for c in (textops.strip_fillers(p) for p in textops.segment_clauses(text)) if c
            ]
            if len(clauses) >= 2:
                return {
                    "clauses": clauses,
                    "option": "decomposition",
                    "text": "; ".join(clauses),
                }
            option = "reformulation"
        if option == "expansion":
            expanded = self._expand(base)
            return {"clauses": [expanded], "option": "expansion", "text": expanded}
        return {"clauses": [base], "option": "reformulation", "text": base}

    def _expand(self, clause: str) -> str:
        present = set(textops.content_tokens(clause))
        slots: list[str] = []
        found = textops.first_verb(clause)
        if found:
            for slot in textops.VERB_CLARIFIERS.get(found[0].lower(), ()):
                if not all(w in present for w in slot.split()):
                    slots.append(slot)
        if not slots:
            slots = ["details"]
        return clause + " (" + ", ".join(f"{s}?" for s in slots) + ")"

    # -- refinement edits ---------------------------------------------------

    def _refine(self, payload: dict) -> dict:
        steps: list[str] = list(payload["steps"])
        feedback = textops.normalize_space(payload["feedback"])
        edit = interpret_feedback(feedback, steps)
        return {"steps": apply_edit(steps, edit), "edit": edit}


# ---------------------------------------------------------------------------
# Planning


def compose_step_text(clause: str, prior: list[str]) -> str:
    """Public form of the planner's per-clause rewrite, for manual step edits."""
    piece = textops.strip_fillers(clause)
    if not piece:
        raise EmptyQueryError("step text is empty after normalization", stage="planner")
    return _compose_step(piece, prior)


# Expansion appends "(keyword?, ...)" hints for the user; they are display
# metadata, not plan content.
_CLARIFIER_TAIL = re.compile(r"\s*\([^()]*\?\)\s*$")


def plan_steps(clauses: list[str]) -> list[str]:
    """Turn refined-query clauses into imperative, slot-explicit step texts."""
    steps: list[str] = []
    for clause in clauses:
        clause = _CLARIFIER_TAIL.sub("", clause)
        pieces = textops.segment_clauses(clause) or [clause]
        for piece in pieces:
            piece = textops.strip_fillers(piece)
            if piece:
                steps.append(_compose_step(piece, steps))
    if not steps:
        raise EmptyQueryError("nothing to plan", stage="planner")
    return steps


def _nearest_step_with(noun: str, steps: list[str]) -> str | None:
    want = textops.singularize(noun)
    for text in reversed(steps):
        if want in textops.overlap_tokens(text):
            return text
    return None


def _compose_step(clause: str, prior: list[str]) -> str:
    text = textops.canonicalize_slots(clause)

    m = _CHECK_ANAPHOR.match(text)
    if m and prior:
        referent = _nearest_step_with(m.group(3), prior) or prior[-1]
        verb = textops.first_verb(referent)
        if verb:
            text = (
                f"check the {textops.past_participle(verb[0])} {m.group(3).lower()} "
                f"if there {m.group(1).lower()} {m.group(2).lower()} present in them"
            )

    m = _BARE_RESULTS.match(text)
    if m and prior and m.group(1).lower() in textops.IMPERATIVE_VERBS:
        root = prior[0]
        head, verb = textops.object_head(root), textops.first_verb(root)
        if head and verb:
            text = (
                f"{m.group(1).lower()} the results of the "
                f"{textops.singularize(head)} {textops.verb_noun(verb[0])}"
            )

    m = _PRONOUN_OBJECT.match(text)
    if m and prior and m.group(1).lower() in textops.IMPERATIVE_VERBS:
        for step in reversed(prior):
            head = textops.object_head(step)
            if head:
                text = f"{m.group(1).lower()} the {head}"
                break

    return textops.capitalize_first(text)


# ---------------------------------------------------------------------------
# Entity extraction


def _object_with_article(rest: list[str]) -> tuple[str | None, list[str], int]:
    """(article, object tokens, index just past the object) for a token tail."""
    i = 0
    article = None
    while i < len(rest):
        tok = rest[i]
        if textops.is_slot(tok):
            return article, [], i
        low = tok.lower()
        if low == "if" or low in textops.OBJECT_BLOCKING_PREPS:
            return article, [], i
        if low in ("the", "a", "an", "those", "these"):
            article = low
            i += 1
            continue
        if low in textops.STOPWORDS:
            i += 1
            continue
        break
    phrase: list[str] = []
    while i < len(rest):
        tok = rest[i]
        if textops.is_slot(tok):
            break
        low = tok.lower()
        if low in textops.STOPWORDS:
            if low == "of" and phrase:
                phrase.append(tok)
                i += 1
                while i < len(rest) and rest[i].lower() in ("the", "a", "an"):
                    phrase.append(rest[i])
                    i += 1
                continue
            break
        phrase.append(tok)
        i += 1
    while phrase and phrase[-1].lower() in ("of", "the", "a", "an"):
        phrase.pop()
        i -= 1
    return article, phrase, i


def _phrase_head(tokens: list[str]) -> str:
    head = tokens[0]
    for tok in tokens:
        if tok.lower() == "of":
            break
        head = tok
    return head.lower()


def _trailing_phrases(rest: list[str]) -> list[tuple[str, list[str]]]:
    """(preposition, tokens) groups for the modifier tail of a step."""
    phrases: list[tuple[str, list[str]]] = []
    current: tuple[str, list[str]] | None = None
    for tok in rest:
        low = tok.lower()
        if not textops.is_slot(tok) and low in _PHRASE_PREPS:
            if current:
                phrases.append(current)
            current = (low, [tok])
        elif current:
            current[1].append(tok)
    if current:
        phrases.append(current)
    return phrases


def context_kind(phrase: str) -> str:
    first = phrase.split(" ", 1)[0].lower()
    if first in ("into", "as"):
        return "format"
    if first in ("via", "to"):
        return "destination"
    if first in ("if", "when", "unless", "every", "only"):
        return "constraint"
    return "other"


def extract_entities(step_texts: list[str]) -> list[dict]:
    """Tag each step's action verb, data labels and context phrases."""
    records: list[dict] = []
    for index, text in enumerate(step_texts):
        records.append(_extract_one(index, text, step_texts[:index]))
    return records


def _extract_one(index: int, text: str, earlier: list[str]) -> dict:
    tokens = textops.tokenize(text)
    found = textops.first_verb(text)
    issues: list[str] = []
    if found:
        verb, vi = found
    else:
        verb, vi = "", -1
        issues.append("no-verb-found")
    rest = tokens[vi + 1 :]

    data: list[str] = list(dict.fromkeys(textops.slot_labels(text)))
    contexts: list[str] = []

    lowered = [t.lower() for t in rest]
    if "if" in lowered:
        ci = lowered.index("if")
        article, obj, _ = _object_with_article(rest[:ci])
        start = ci
        if not obj or (len(obj) == 1 and len(obj[0]) <= 2):
            start = 0  # fold a bare flag token like "O" into the condition
            obj = []
        tail = rest[start:]
        # Strip a trailing source phrase that carries a slot.
        for j in range(len(tail) - 1, -1, -1):
            low = tail[j].lower()
            if low in _SOURCE_PREPS and any(textops.is_slot(t) for t in tail[j + 1 :]):
                tail = tail[:j]
                break
        if obj:
            data.append(" ".join(obj))
        if tail:
            contexts.append(" ".join(tail))
    else:
        article, obj, end = _object_with_article(rest)
        phrases = _trailing_phrases(rest[end:])
        source_given = any(
            prep in _SOURCE_PREPS and any(textops.is_slot(t) for t in toks[1:])
            for prep, toks in phrases
        )
        if obj:
            label = " ".join(obj)
            head = _phrase_head(obj)
            anaphoric = _is_anaphoric(article, obj, earlier)
            if verb.lower() == "search" and head in textops.SEARCH_TITLED_NOUNS:
                data.append(f"{head} title")
            elif anaphoric or not source_given:
                data.append(label)
        for prep, toks in phrases:
            if any(textops.is_slot(t) for t in toks):
                continue
            body = [t for t in toks[1:] if t.lower() not in ("the", "a", "an")]
            if (
                verb.lower() == "search"
                and prep in ("on", "in")
                and body
                and body[0].lower() in textops.SEARCH_ENGINE_NAMES
            ):
                data.append("search engine")
                continue
            contexts.append(" ".join(toks))
        if verb.lower() in textops.PURCHASE_VERBS:
            data.append("purchase platform")

    return {
        "step_index": index,
        "action_verb": verb,
        "data_labels": list(dict.fromkeys(data)),
        "context_phrases": contexts,
        "issues": issues,
    }


def _is_anaphoric(article: str | None, obj_tokens: list[str], earlier: list[str]) -> bool:
    if not obj_tokens:
        return False
    head = _phrase_head(obj_tokens)
    if head in textops.RESULT_NOUNS:
        return True
    if article in ("the", "those", "these"):
        if textops.looks_past_participle(obj_tokens[0]) and len(obj_tokens) > 1:
            return True
        want = textops.singularize(head)
        return any(want in textops.overlap_tokens(text) for text in earlier)
    return False


def is_upstream_label(label: str, step_index: int, earlier_texts: list[str]) -> int | None:
    """Earlier step index feeding an anaphoric label, or None if external.

    Resolution: nearest preceding step sharing a content token; bare result
    nouns with no overlap fall back to the immediately preceding step.
    """
    if step_index == 0 or not earlier_texts:
        return None
    tokens = textops.tokenize(label)
    if not tokens:
        return None
    head = _phrase_head(tokens)
    anaphoric = (
        head in textops.RESULT_NOUNS
        or (textops.looks_past_participle(tokens[0]) and len(tokens) > 1)
        or any(
            textops.singularize(head) in textops.overlap_tokens(t) for t in earlier_texts
        )
    )
    if not anaphoric:
        return None
    want = textops.overlap_tokens(label)
    for j in range(len(earlier_texts) - 1, -1, -1):
        if want & textops.overlap_tokens(earlier_texts[j]):
            return j
    if head in textops.RESULT_NOUNS:
        return step_index - 1
    return None


# ---------------------------------------------------------------------------
# Mapping-agent scoring

VERB_MATCH_BONUS = 0.25
PARAM_MATCH_BONUS = 0.10


def mapping_score(
    similarity: float, verb: str, name: str, required: list[str], satisfiable: list[str]
) -> float:
    """Retrieval similarity plus verb-match and parameter-coverage bonuses."""
    score = similarity
    if verb and name.split("_")[0].lower() == verb.lower():
        score += VERB_MATCH_BONUS
    if required:
        covered = len(set(required) & set(satisfiable)) / len(required)
    else:
        covered = 1.0
    return score + PARAM_MATCH_BONUS * covered


def rank_mapping_candidates(payload: dict) -> str:
    """Best candidate id by score; ties break to the lowest action id."""
    verb = payload.get("action_verb", "")
    best_id: str | None = None
    best_score = float("-inf")
    for cand in payload["candidates"]:
        score = mapping_score(
            cand["similarity"],
            verb,
            cand["name"],
            cand.get("required", []),
            cand.get("satisfiable", []),
        )
        if score > best_score or (score == best_score and (best_id is None or cand["action_id"] < best_id)):
            best_id, best_score = cand["action_id"], score
    if best_id is None:
        raise ValueError("no candidates to rank")
    return best_id


# ---------------------------------------------------------------------------
# Feedback edit grammar


def interpret_feedback(feedback: str, steps: list[str]) -> dict:
    """Map one human feedback sentence onto a structural plan edit."""
    text = feedback.strip().rstrip(".")
    if not text:
        raise UninterpretableFeedbackError("empty feedback", stage="refiner")

    m = _EDIT_REORDER.match(text)
    if m:
        src, dst = int(m.group(1)) - 1, int(m.group(2)) - 1
        if not (0 <= src < len(steps) and 0 <= dst < len(steps)):
            raise UninterpretableFeedbackError(
                f"step number out of range in {feedback!r}", stage="refiner"
            )
        return {"kind": "reorder", "from": src, "to": dst}

    m = _EDIT_REPLACE_INDEX.match(text)
    if m:
        idx = int(m.group(1)) - 1
        if not 0 <= idx < len(steps):
            raise UninterpretableFeedbackError(
                f"step number out of range in {feedback!r}", stage="refiner"
            )
        return {"kind": "replace", "index": idx, "text": m.group(2)}

    m = _EDIT_REPLACE.match(text)
    if m:
        idx = _find_step(m.group(1), steps)
        if idx is None:
            raise UninterpretableFeedbackError(
                f"no step matches {m.group(1)!r}", stage="refiner"
            )
        return {"kind": "replace", "index": idx, "text": m.group(2)}

    m = _EDIT_REMOVE.match(text)
    if m:
        idx = _find_step(m.group(1), steps)
        if idx is None:
            raise UninterpretableFeedbackError(
                f"no step matches {m.group(1)!r}", stage="refiner"
            )
        return {"kind": "remove", "index": idx}

    m = _EDIT_APPEND.match(text)
    if m:
        return {"kind": "append", "text": m.group(1)}

    raise UninterpretableFeedbackError(
        f"cannot interpret feedback {feedback!r}", stage="refiner"
    )


def _find_step(phrase: str, steps: list[str]) -> int | None:
    """First step whose leading verb or text matches the phrase."""
    want = textops.normalize_space(phrase).lower()
    if want.startswith("step "):
        try:
            idx = int(want.split(" ", 1)[1]) - 1
        except ValueError:
            idx = -1
        if 0 <= idx < len(steps):
            return idx
    for i, text in enumerate(steps):
        verb = textops.first_verb(text)
        if verb and verb[0].lower() == want:
            return i
    for i, text in enumerate(steps):
        if want in text.lower():
            return i
    return None


def apply_edit(steps: list[str], edit: dict) -> list[str]:
    """Apply an interpreted edit, composing any new step text like the planner."""
    out = list(steps)
    kind = edit["kind"]
    if kind == "remove":
        del out[edit["index"]]
        if not out:
            raise UninterpretableFeedbackError(
                "cannot remove the only step", stage="refiner"
            )
    elif kind == "append":
        out.append(_compose_step(textops.strip_fillers(edit["text"]), out))
    elif kind == "replace":
        idx = edit["index"]
        prior = out[:idx]
        new_text = _compose_replacement(edit["text"], out[idx], prior)
        out[idx] = new_text
    elif kind == "reorder":
        step = out.pop(edit["from"])
        out.insert(edit["to"], step)
    else:  # pragma: no cover - interpret_feedback is the only producer
        raise UninterpretableFeedbackError(f"unknown edit kind {kind!r}", stage="refiner")
    return out


def _compose_replacement(new_text: str, replaced: str, prior: list[str]) -> str:
    """Compose a replacement step; verb-only phrases inherit the old object."""
    clause = textops.strip_fillers(new_text)
    found = textops.first_verb(clause)
    has_object = bool(_object_with_article(textops.tokenize(clause)[1:])[1]) if found else False
    if found and not has_object and not textops.slot_labels(clause):
        old_obj = textops.object_phrase(replaced)
        if old_obj:
            head_phrase: list[str] = []
            for tok in old_obj:
                if tok.lower() == "of":
                    break
                head_phrase.append(tok)
            verb, vi = found
            tokens = textops.tokenize(clause)
            tail = tokens[vi + 1 :]
            clause = " ".join([verb.lower(), "the", *[t.lower() for t in head_phrase], *tail])
    return _compose_step(clause, prior)
