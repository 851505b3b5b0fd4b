"""External language-model provider, configured entirely from the environment.

    NLFLOW_MODEL_ENDPOINT   chat-completions style endpoint URL
    NLFLOW_MODEL_KEY        bearer credential
    NLFLOW_MODEL_NAME       model identifier

The provider asks the model to answer with the same JSON documents the
rule-based provider produces; the gateway's grammar check and single retry
guard against free-form answers.
"""

from __future__ import annotations

import os

import httpx

from .errors import ProviderUnavailableError
from .gateway import AgentRequest, AgentRole, ProviderKind

_ROLE_FORMATS = {
    AgentRole.QUERY_PROCESSOR: '{"clauses": [...], "option": "...", "text": "..."}',
    AgentRole.PLANNER: '{"steps": ["...", "..."]}',
    AgentRole.ENTITY_EXTRACTOR: (
        '{"entities": [{"step_index": 0, "action_verb": "...", '
        '"data_labels": [...], "context_phrases": [...]}]}'
    ),
    AgentRole.MAPPER: '{"action_id": "..."}',
    AgentRole.REFINER: '{"steps": ["...", "..."]}',
}


def external_roles() -> list[AgentRole]:
    return list(AgentRole)


class ExternalModelProvider:
    kind = ProviderKind.EXTERNAL_MODEL

    def __init__(self, endpoint: str, credential: str, model: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.credential = credential
        self.model = model
        self.timeout = timeout

    @classmethod
    def from_env(cls) -> "ExternalModelProvider":
        endpoint = os.environ.get("NLFLOW_MODEL_ENDPOINT", "")
        if not endpoint:
            raise ProviderUnavailableError("NLFLOW_MODEL_ENDPOINT is not set")
        return cls(
            endpoint=endpoint,
            credential=os.environ.get("NLFLOW_MODEL_KEY", ""),
            model=os.environ.get("NLFLOW_MODEL_NAME", ""),
        )

    def complete(self, request: AgentRequest) -> str:
        body = {
            "model": self.model,
            "messages": [
                {
                    "role": "system",
                    "content": (
                        f"{request.instruction} Respond with exactly one JSON document "
                        f"of the form {_ROLE_FORMATS[request.role]} and nothing else."
                    ),
                },
                {"role": "user", "content": request.payload},
            ],
            "temperature": 0 if request.determinism.value == "deterministic" else 0.7,
        }
        headers = {"Content-Type": "application/json"}
        if self.credential:
            headers["Authorization"] = f"Bearer {self.credential}"
        try:
            response = httpx.post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise ProviderUnavailableError(f"external model call failed: {exc}") from exc
        doc = response.json()
        try:
            content = doc["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ProviderUnavailableError("external model returned an unexpected envelope") from None
        # Models often wrap JSON in code fences; unwrap before validation.
        text = content.strip()
        if text.startswith("```"):
            text = text.strip("`")
            if text.startswith("json"):
                text = text[4:]
        return text.strip()
