"""Action pool: registered capabilities, embedding retrieval, candidate mapping.

The offline embedder is a hashed bag of words: lowercase alphanumeric tokens,
stable 64-bit hashing into 256 buckets, term counts, L2 normalization. An
external embedding provider can be swapped in behind the same unit-norm
contract. Retrieval is an exact scan; pools are small by design.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from . import rulebased
from .errors import EmptyPoolError, EmptyTextError, ParseError
from .gateway import AgentRequest, AgentRole, Gateway, ProviderKind
from .model import ActionBinding, ParamKind, ParamValue, SourceKind, Step

EMBEDDING_DIM = 256
DEFAULT_TOP_K = 10

_EMBED_TOKEN = re.compile(r"[a-z0-9]+")


def embed_counts(text: str, dim: int = EMBEDDING_DIM) -> np.ndarray:
    """Integer term-count vector over stable hash buckets."""
    tokens = _EMBED_TOKEN.findall(text.lower())
    if not tokens:
        raise EmptyTextError("cannot embed empty text")
    counts = np.zeros(dim, dtype=np.int64)
    for token in tokens:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        counts[int.from_bytes(digest, "big") % dim] += 1
    return counts


def embed_text(text: str, dim: int = EMBEDDING_DIM) -> np.ndarray:
    """Deterministic unit-norm embedding of a text."""
    counts = embed_counts(text, dim).astype(np.float64)
    return counts / np.linalg.norm(counts)


@dataclass(frozen=True)
class ParameterSpec:
    label: str
    required: bool = True
    kind: str = "text"  # file | url | text | table


@dataclass(frozen=True)
class ActionDescriptor:
    id: str
    name: str
    description: str
    parameter_schema: tuple[ParameterSpec, ...] = ()
    executor_kind: str = "builtin"  # builtin | http_api | shell_out
    executor_config: dict[str, Any] = field(default_factory=dict)
    embedding: np.ndarray | None = field(default=None, compare=False, repr=False)
    counts: np.ndarray | None = field(default=None, compare=False, repr=False)

    @property
    def embedding_text(self) -> str:
        return f"{self.name.replace('_', ' ')} {self.description}"

    def with_embedding(self) -> "ActionDescriptor":
        if self.embedding is not None and self.counts is not None:
            return self
        from dataclasses import replace

        counts = embed_counts(self.embedding_text)
        vector = counts.astype(np.float64)
        vector /= np.linalg.norm(vector)
        return replace(self, embedding=vector, counts=counts)


@dataclass(frozen=True)
class Candidate:
    action_id: str
    similarity: float


@dataclass(frozen=True)
class CandidateSet:
    step_index: int
    candidates: tuple[Candidate, ...]


def load_manifest_doc(doc: Any, *, path: str = "$") -> ActionDescriptor:
    """Build a descriptor from a manifest document, validating field shapes."""
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: manifest must be an object", path=path)
    for key in ("id", "name", "description"):
        if not isinstance(doc.get(key), str) or not doc[key].strip():
            raise ParseError(f"{path}.{key}: missing or empty", path=f"{path}.{key}")
    params = []
    for i, item in enumerate(doc.get("parameter_schema", [])):
        ppath = f"{path}.parameter_schema[{i}]"
        if not isinstance(item, dict) or not isinstance(item.get("label"), str):
            raise ParseError(f"{ppath}: expected {{label, required, kind}}", path=ppath)
        kind = item.get("kind", "text")
        if kind not in ("file", "url", "text", "table"):
            raise ParseError(f"{ppath}.kind: bad parameter kind {kind!r}", path=f"{ppath}.kind")
        params.append(
            ParameterSpec(label=item["label"], required=bool(item.get("required", True)), kind=kind)
        )
    executor_kind = doc.get("executor_kind", "builtin")
    if executor_kind not in ("builtin", "http_api", "shell_out"):
        raise ParseError(
            f"{path}.executor_kind: bad value {executor_kind!r}", path=f"{path}.executor_kind"
        )
    return ActionDescriptor(
        id=doc["id"],
        name=doc["name"],
        description=doc["description"],
        parameter_schema=tuple(params),
        executor_kind=executor_kind,
        executor_config=dict(doc.get("executor_config", {})),
    ).with_embedding()


def manifest_doc(action: ActionDescriptor) -> dict[str, Any]:
    return {
        "description": action.description,
        "executor_config": action.executor_config,
        "executor_kind": action.executor_kind,
        "id": action.id,
        "name": action.name,
        "parameter_schema": [
            {"kind": p.kind, "label": p.label, "required": p.required}
            for p in action.parameter_schema
        ],
    }


class ActionPool:
    """Read-mostly registry; retrieval works over a consistent snapshot."""

    def __init__(self, actions: Iterable[ActionDescriptor] = ()):
        self._lock = threading.Lock()
        self._actions: dict[str, ActionDescriptor] = {}
        for action in actions:
            self.register(action)

    def register(self, action: ActionDescriptor) -> None:
        with self._lock:
            self._actions[action.id] = action.with_embedding()

    def remove(self, action_id: str) -> None:
        with self._lock:
            self._actions.pop(action_id, None)

    def get(self, action_id: str) -> ActionDescriptor | None:
        with self._lock:
            return self._actions.get(action_id)

    def snapshot(self) -> list[ActionDescriptor]:
        with self._lock:
            return sorted(self._actions.values(), key=lambda a: a.id)

    def __len__(self) -> int:
        with self._lock:
            return len(self._actions)

    def load_directory(self, directory: Path | str) -> int:
        count = 0
        for file in sorted(Path(directory).glob("*.json")):
            doc = json.loads(file.read_text(encoding="utf-8"))
            self.register(load_manifest_doc(doc, path=file.name))
            count += 1
        return count


def retrieve(step_text: str, pool: ActionPool, k: int = DEFAULT_TOP_K, step_index: int = 0) -> CandidateSet:
    """Exact top-k by cosine similarity, ties broken by ascending action id.

    Ordering uses exact integer arithmetic on the term-count vectors (count
    dots are non-negative, so cosines order by dot^2/|a|^2 at fixed query);
    float similarities are derived from the exact ratio so equal cosines stay
    equal and the tie-break is stable.
    """
    actions = pool.snapshot()
    if not actions:
        raise EmptyPoolError("action pool is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    query_counts = embed_counts(step_text)
    query_norm2 = int(query_counts @ query_counts)
    ranked: list[tuple[Fraction, str, float]] = []
    for action in actions:
        dot = int(action.counts @ query_counts)
        norm2 = int(action.counts @ action.counts)
        ratio = Fraction(dot * dot, norm2 * query_norm2)
        similarity = float(ratio) ** 0.5
        ranked.append((ratio, action.id, similarity))
    ranked.sort(key=lambda item: (-item[0], item[1]))
    chosen = ranked[: min(k, len(actions))]
    return CandidateSet(
        step_index=step_index,
        candidates=tuple(Candidate(action_id, sim) for _, action_id, sim in chosen),
    )


def _normalize_label(label: str) -> set[str]:
    return {w.lower() for w in re.findall(r"[A-Za-z0-9]+", label)}


def _capsule_value(capsule) -> ParamValue | None:
    src = capsule.source
    if src is None:
        return None
    if src.kind is SourceKind.STEP_OUTPUT:
        return ParamValue(ParamKind.STEP_OUTPUT, src.step_index)
    kind = {
        SourceKind.FILE: ParamKind.FILE,
        SourceKind.URL: ParamKind.URL,
        SourceKind.DATABASE: ParamKind.TABLE,
    }[src.kind]
    return ParamValue(kind, src.ref)


def _label_match(param: ParameterSpec, step: Step):
    """Capsule matching the parameter by label: exact, then token subset."""
    want = _normalize_label(param.label)
    for capsule in step.data:
        if _normalize_label(capsule.label) == want:
            return capsule
    for capsule in step.data:
        have = _normalize_label(capsule.label)
        if want and have and (want <= have or have <= want):
            return capsule
    return None


def _kind_fits(capsule, param_kind: str) -> bool:
    src = capsule.source
    if src is None:
        return False
    if src.kind is SourceKind.STEP_OUTPUT:
        return True  # an upstream output adapts to any parameter kind
    fits = {
        SourceKind.FILE: ("file", "table", "text"),
        SourceKind.URL: ("url", "text"),
        SourceKind.DATABASE: ("table",),
    }[src.kind]
    return param_kind in fits


@dataclass(frozen=True)
class ParameterFill:
    parameters: dict[str, ParamValue]
    missing_required: tuple[str, ...]
    satisfiable_required: tuple[str, ...]


def fill_parameters(action: ActionDescriptor, step: Step) -> ParameterFill:
    """Bind parameter values from capsules and context annotations.

    Per parameter, in order: label-matched capsule, context-derived value,
    then kind-matched capsule (each capsule feeds at most one parameter this
    way). A required parameter is only "missing" when nothing can ever feed
    it; an unresolved capsule that could still be linked counts as pending.
    """
    context_params = _context_parameters(action.parameter_schema, step)
    parameters: dict[str, ParamValue] = {}
    missing: list[str] = []
    satisfiable: list[str] = []
    consumed: set[str] = set()
    pending_pool = [c.label for c in step.data if c.source is None]

    for param in action.parameter_schema:
        matched = _label_match(param, step)
        if matched is not None:
            consumed.add(matched.label)
            if matched.label in pending_pool:
                pending_pool.remove(matched.label)
            value = _capsule_value(matched)
            if value is not None:
                parameters[param.label] = value
            if param.required:
                satisfiable.append(param.label)
            continue
        if param.label in context_params:
            parameters[param.label] = context_params[param.label]
            if param.required:
                satisfiable.append(param.label)
            continue
        kind_matched = next(
            (c for c in step.data if c.label not in consumed and _kind_fits(c, param.kind)),
            None,
        )
        if kind_matched is not None:
            consumed.add(kind_matched.label)
            parameters[param.label] = _capsule_value(kind_matched)  # type: ignore[assignment]
            if param.required:
                satisfiable.append(param.label)
            continue
        if param.required:
            if pending_pool:
                # An unlinked capsule will feed this once the user resolves it.
                pending_pool.pop(0)
            else:
                missing.append(param.label)
    return ParameterFill(
        parameters=parameters,
        missing_required=tuple(missing),
        satisfiable_required=tuple(satisfiable),
    )


_LANGUAGE_PATTERN = re.compile(r"\b(?:to|into|in)\s+([A-Z][a-z]+)\b")
_EMAIL_PATTERN = re.compile(r"[\w.+-]+@[\w-]+\.[\w.-]+")


def _context_parameters(spec: Iterable[ParameterSpec], step: Step) -> dict[str, ParamValue]:
    """Parameter values recoverable from context annotations (language, email)."""
    out: dict[str, ParamValue] = {}
    context_text = " ".join(c.text for c in step.context)
    for param in spec:
        want = _normalize_label(param.label)
        if want & {"language", "target"}:
            m = _LANGUAGE_PATTERN.search(context_text)
            if m:
                out[param.label] = ParamValue(ParamKind.LITERAL, m.group(1))
        if want & {"to", "recipient", "email"}:
            m = _EMAIL_PATTERN.search(context_text)
            if m:
                out[param.label] = ParamValue(ParamKind.LITERAL, m.group(0))
    return out


@dataclass(frozen=True)
class MappingResult:
    binding: ActionBinding
    missing_required: tuple[str, ...]


def similarity(step_text: str, action: ActionDescriptor) -> float:
    """Cosine between a step text and one action, via the exact ratio."""
    query = embed_counts(step_text)
    target = action.with_embedding().counts
    dot = int(target @ query)
    ratio = Fraction(dot * dot, int(target @ target) * int(query @ query))
    return float(ratio) ** 0.5


def bind_to(step: Step, action: ActionDescriptor, verb: str, sim: float) -> MappingResult:
    """Bind a step to a specific action: score it and fill its parameters."""
    required = [p.label for p in action.parameter_schema if p.required]
    fill = fill_parameters(action, step)
    score = rulebased.mapping_score(
        sim, verb, action.name, required, list(fill.satisfiable_required)
    )
    binding = ActionBinding(
        action_id=action.id, verb=verb, score=score, parameters=fill.parameters
    )
    return MappingResult(binding=binding, missing_required=fill.missing_required)


def map_action(
    step: Step,
    candidates: CandidateSet,
    action_verb: str,
    pool: ActionPool,
    gateway: Gateway | None = None,
) -> MappingResult:
    """Pick the best candidate and bind parameters from capsules and context.

    Scoring is similarity plus a verb-match bonus and a required-parameter
    coverage bonus; an external mapper registered on the gateway may override
    the choice, falling back to the rule score on any error.
    """
    if not candidates.candidates:
        raise EmptyPoolError("no candidates to map")
    docs = []
    for cand in candidates.candidates:
        action = pool.get(cand.action_id)
        if action is None:
            continue
        fill = fill_parameters(action, step)
        docs.append(
            {
                "action_id": action.id,
                "name": action.name,
                "description": action.description,
                "similarity": cand.similarity,
                "required": [p.label for p in action.parameter_schema if p.required],
                "satisfiable": list(fill.satisfiable_required),
                "parameter_schema": [
                    {"kind": p.kind, "label": p.label, "required": p.required}
                    for p in action.parameter_schema
                ],
            }
        )
    if not docs:
        raise EmptyPoolError("candidates reference unknown actions")

    payload = {
        "action_verb": action_verb,
        "candidates": docs,
        "step_text": step.text,
        "capsule_labels": [c.label for c in step.data],
    }
    chosen_id: str | None = None
    if gateway is not None and gateway.provider_kind(AgentRole.MAPPER) is ProviderKind.EXTERNAL_MODEL:
        try:
            response = gateway.invoke(
                AgentRequest(
                    role=AgentRole.MAPPER,
                    instruction="Select the action that best realizes the step.",
                    payload=json.dumps(payload, sort_keys=True),
                )
            )
            proposed = response.content_doc()["action_id"]
            if any(d["action_id"] == proposed for d in docs):
                chosen_id = proposed
        except Exception:
            chosen_id = None
    if chosen_id is None:
        chosen_id = rulebased.rank_mapping_candidates(payload)

    action = pool.get(chosen_id)
    assert action is not None
    chosen_doc = next(d for d in docs if d["action_id"] == chosen_id)
    return bind_to(step, action, action_verb, chosen_doc["similarity"])


def rebind_parameters(step: Step, pool: ActionPool) -> Step | None:
    """Refresh a bound step's parameters after capsules changed; None if unbound."""
    if step.action is None:
        return None
    action = pool.get(step.action.action_id)
    if action is None:
        return None
    fill = fill_parameters(action, step)
    from dataclasses import replace as _replace

    return _replace(step, action=_replace(step.action, parameters=fill.parameters))
