"""List Builder: score, deduplicate and order agent results."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass

from .models import AgentResponse, RankedResult, ResultItem, SemanticQuery

DEFAULT_KEYWORD_WEIGHT = 0.5
DEFAULT_PATTERN_WEIGHT = 0.5


@dataclass(frozen=True)
class Weights:
    keyword: float = DEFAULT_KEYWORD_WEIGHT
    pattern: float = DEFAULT_PATTERN_WEIGHT

    def __post_init__(self) -> None:
        if self.keyword < 0 or self.pattern < 0 or abs(self.keyword + self.pattern - 1.0) > 1e-9:
            raise ValueError("rank weights must be non-negative and sum to 1.0")


@dataclass(frozen=True)
class ScoredItem:
    item: ResultItem
    score: float
    latency_ms: int = 0


def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    sa, sb = set(a), set(b)
    union = sa | sb
    if not union:
        return 0.0
    return len(sa & sb) / len(union)


def score(item: ResultItem, query: SemanticQuery, weights: Weights = Weights()) -> float:
    kw = jaccard(query.keywords, item.terms)
    ratio = item.matched_patterns / len(query.patterns) if query.patterns else 0.0
    return min(1.0, max(0.0, weights.keyword * kw + weights.pattern * ratio))


def dedupe(items: list[ScoredItem]) -> list[ScoredItem]:
    """One entry per item_id: the highest score wins, the earliest wins a tie.

    Survivors keep the position of the first occurrence of their item_id.
    """
    best: dict[str, ScoredItem] = {}
    for s in items:
        current = best.get(s.item.item_id)
        if current is None or s.score > current.score:
            best[s.item.item_id] = s
    return list(best.values())


def rank(
    responses: list[AgentResponse], query: SemanticQuery, weights: Weights = Weights(),
) -> list[RankedResult]:
    """Dense ranking of every Ok item by (score desc, latency asc, item_id asc).

    Responses are flattened in agent_id order so the outcome does not depend on
    the order they are passed in.
    """
    scored = [
        ScoredItem(item, score(item, query, weights), r.latency_ms)
        for r in sorted(responses, key=lambda r: r.agent_id)
        if r.ok
        for item in r.items
    ]
    unique = dedupe(scored)
    unique.sort(key=lambda s: (-s.score, s.latency_ms, s.item.item_id))
    return [RankedResult(item=s.item, score=s.score, rank=i) for i, s in enumerate(unique, start=1)]
