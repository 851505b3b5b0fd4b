"""Uniform agent contract so every pipeline stage is pluggable.

A provider is anything with a `kind` and a `complete(request) -> str`.
The gateway owns role registration, response-grammar validation, the
single retry for malformed external responses, and call timeouts.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Protocol

from .errors import GatewayTimeoutError, MalformedResponseError, ProviderUnavailableError

DEFAULT_TIMEOUT_SECONDS = 30.0


class AgentRole(str, Enum):
    QUERY_PROCESSOR = "query_processor"
    PLANNER = "planner"
    ENTITY_EXTRACTOR = "entity_extractor"
    MAPPER = "mapper"
    REFINER = "refiner"


class Determinism(str, Enum):
    DETERMINISTIC = "deterministic"
    SAMPLED = "sampled"


class ProviderKind(str, Enum):
    RULE_BASED = "rule_based"
    EXTERNAL_MODEL = "external_model"


@dataclass(frozen=True)
class AgentRequest:
    role: AgentRole
    instruction: str
    payload: str
    determinism: Determinism = Determinism.DETERMINISTIC

    def payload_doc(self) -> Any:
        return json.loads(self.payload)


@dataclass(frozen=True)
class AgentResponse:
    content: str
    provider: ProviderKind
    latency: float

    def content_doc(self) -> Any:
        return json.loads(self.content)


class Provider(Protocol):
    kind: ProviderKind

    def complete(self, request: AgentRequest) -> str: ...


def _non_empty_str(value: Any) -> bool:
    return isinstance(value, str) and bool(value.strip())


def _str_list(value: Any, allow_empty: bool = False) -> bool:
    return isinstance(value, list) and (allow_empty or value) and all(
        isinstance(v, str) for v in value
    )


def _check_query(doc: Any) -> None:
    if not isinstance(doc, dict):
        raise ValueError("expected object")
    if doc.get("option") not in ("reformulation", "expansion", "decomposition"):
        raise ValueError("bad option")
    if not _non_empty_str(doc.get("text")):
        raise ValueError("missing text")
    clauses = doc.get("clauses")
    if not _str_list(clauses) or not all(c.strip() for c in clauses):
        raise ValueError("clauses must be non-empty strings")
    if (doc["option"] == "decomposition") != (len(clauses) >= 2):
        raise ValueError("decomposition iff 2+ clauses")


def _check_steps(doc: Any) -> None:
    if not isinstance(doc, dict) or not _str_list(doc.get("steps")):
        raise ValueError("expected {steps: [text, ...]}")
    if not all(s.strip() for s in doc["steps"]):
        raise ValueError("empty step text")


def _check_entities(doc: Any) -> None:
    if not isinstance(doc, dict) or not isinstance(doc.get("entities"), list):
        raise ValueError("expected {entities: [...]}")
    for item in doc["entities"]:
        if not isinstance(item, dict):
            raise ValueError("entity record must be an object")
        if not isinstance(item.get("step_index"), int):
            raise ValueError("entity record needs step_index")
        if not isinstance(item.get("action_verb"), str):
            raise ValueError("entity record needs action_verb")
        if not _str_list(item.get("data_labels"), allow_empty=True):
            raise ValueError("data_labels must be strings")
        if not _str_list(item.get("context_phrases"), allow_empty=True):
            raise ValueError("context_phrases must be strings")


def _check_mapping(doc: Any) -> None:
    if not isinstance(doc, dict) or not _non_empty_str(doc.get("action_id")):
        raise ValueError("expected {action_id: ...}")


RESPONSE_GRAMMARS: dict[AgentRole, Callable[[Any], None]] = {
    AgentRole.QUERY_PROCESSOR: _check_query,
    AgentRole.PLANNER: _check_steps,
    AgentRole.ENTITY_EXTRACTOR: _check_entities,
    AgentRole.MAPPER: _check_mapping,
    AgentRole.REFINER: _check_steps,
}


def parse_content(role: AgentRole, content: str) -> Any:
    """Parse and grammar-check a response body for a role."""
    try:
        doc = json.loads(content)
    except json.JSONDecodeError as exc:
        raise MalformedResponseError(f"{role.value} response is not JSON: {exc.msg}") from None
    try:
        RESPONSE_GRAMMARS[role](doc)
    except ValueError as exc:
        raise MalformedResponseError(f"{role.value} response rejected: {exc}") from None
    return doc


class Gateway:
    """Role -> provider registry plus the invoke path every stage uses."""

    def __init__(self, timeout: float = DEFAULT_TIMEOUT_SECONDS):
        self.timeout = timeout
        self._providers: dict[AgentRole, Provider] = {}

    def register_provider(self, role: AgentRole, provider: Provider) -> None:
        self._providers[role] = provider

    def unregister_provider(self, role: AgentRole) -> None:
        self._providers.pop(role, None)

    def register_all(self, provider: Provider) -> None:
        for role in AgentRole:
            self.register_provider(role, provider)

    def has_provider(self, role: AgentRole) -> bool:
        return role in self._providers

    def provider_kind(self, role: AgentRole) -> ProviderKind | None:
        provider = self._providers.get(role)
        return provider.kind if provider else None

    def _call(self, provider: Provider, request: AgentRequest) -> str:
        if provider.kind is not ProviderKind.EXTERNAL_MODEL:
            return provider.complete(request)
        # Daemon thread per external call: a hung provider cannot block
        # process exit, unlike pool threads joined at interpreter shutdown.
        outcome: dict[str, Any] = {}
        finished = threading.Event()

        def work() -> None:
            try:
                outcome["value"] = provider.complete(request)
            except BaseException as exc:  # surfaced on the caller's thread
                outcome["error"] = exc
            finally:
                finished.set()

        threading.Thread(target=work, daemon=True, name="gateway-call").start()
        if not finished.wait(self.timeout):
            raise GatewayTimeoutError(
                f"{request.role.value} provider timed out after {self.timeout}s"
            )
        if "error" in outcome:
            raise outcome["error"]
        return outcome["value"]

    def invoke(self, request: AgentRequest) -> AgentResponse:
        provider = self._providers.get(request.role)
        if provider is None:
            raise ProviderUnavailableError(f"no provider registered for {request.role.value}")
        attempts = 2 if provider.kind is ProviderKind.EXTERNAL_MODEL else 1
        started = time.perf_counter()
        last_error: MalformedResponseError | None = None
        for _ in range(attempts):
            content = self._call(provider, request)
            try:
                parse_content(request.role, content)
            except MalformedResponseError as exc:
                last_error = exc
                continue
            return AgentResponse(
                content=content, provider=provider.kind, latency=time.perf_counter() - started
            )
        assert last_error is not None
        raise last_error
