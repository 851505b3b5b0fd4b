"""Query processing stage: pick and apply reformulation, expansion or decomposition."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from . import textops
from .errors import EmptyQueryError
from .gateway import AgentRequest, AgentRole, Gateway


class QueryOption(str, Enum):
    REFORMULATION = "reformulation"
    EXPANSION = "expansion"
    DECOMPOSITION = "decomposition"


@dataclass(frozen=True)
class RawQuery:
    text: str
    locale: str | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise EmptyQueryError("query text is empty", stage="query_processor")


@dataclass(frozen=True)
class RefinedQuery:
    text: str
    option_applied: QueryOption
    clauses: tuple[str, ...]


def select_option(query: RawQuery) -> QueryOption:
    """Heuristic policy: two or more clause boundaries decompose, very short
    single clauses expand, everything else reformulates. Callers may override.
    """
    clauses = textops.segment_clauses(query.text)
    if len(clauses) - 1 >= 2:
        return QueryOption.DECOMPOSITION
    if len(clauses) <= 1 and len(textops.content_tokens(query.text)) < 4:
        return QueryOption.EXPANSION
    return QueryOption.REFORMULATION


def process(query: RawQuery, option: QueryOption, gateway: Gateway) -> RefinedQuery:
    """Apply the chosen operation through the query-processor agent."""
    request = AgentRequest(
        role=AgentRole.QUERY_PROCESSOR,
        instruction="Rewrite the request so it is precise and ready for planning.",
        payload=json.dumps({"option": option.value, "text": query.text}, sort_keys=True),
    )
    response = gateway.invoke(request)
    doc = response.content_doc()
    return RefinedQuery(
        text=doc["text"],
        option_applied=QueryOption(doc["option"]),
        clauses=tuple(doc["clauses"]),
    )


def refine_query(query: RawQuery, gateway: Gateway, option: QueryOption | None = None) -> RefinedQuery:
    return process(query, option or select_option(query), gateway)
