from __future__ import annotations

import threading
from pathlib import Path

import pytest

from soas.models import (
    AgentDescriptor, AgentResponse, ITEM_VAR, Outcome, ResultItem, SemanticQuery, Term, TriplePattern,
)
from soas.registry import AgentRegistry, RegistryEndpoint
from soas.sim_agents import KnowledgeBase, ScriptedBehavior, serve
from soas.wire import FrameServer

SEEDS = Path(__file__).resolve().parent.parent / "seeds"

# -----------------------------------------------------------------------
# Factories
# -----------------------------------------------------------------------


def pattern(predicate: str, obj: str, subject: str = ITEM_VAR) -> TriplePattern:
    s = Term.var(subject) if subject.startswith("?") else Term.lit(subject)
    p = Term.var(predicate) if predicate.startswith("?") else Term.lit(predicate)
    o = Term.var(obj) if obj.startswith("?") else Term.lit(obj)
    return TriplePattern(s, p, o)


def make_query(
    keywords=("hotels", "vienna"),
    patterns=None,
    request_id: str = "req-1",
    domain: str = "travel",
    confidence: float = 1.0,
    constraints=(),
) -> SemanticQuery:
    if patterns is None:
        patterns = [pattern("relates-to", k) for k in keywords]
    return SemanticQuery(request_id, domain, confidence, tuple(keywords), tuple(patterns), tuple(constraints))


def make_item(
    item_id: str = "hotel-1",
    terms=("hotels", "vienna"),
    matched: int = 1,
    source: str = "agent-a",
    title: str | None = None,
) -> ResultItem:
    return ResultItem(item_id, title or item_id, frozenset(terms), matched, source)


def make_response(
    agent_id: str = "agent-a",
    items=(),
    latency_ms: int = 10,
    outcome: Outcome = Outcome.Ok,
    request_id: str = "req-1",
) -> AgentResponse:
    return AgentResponse(agent_id, request_id, tuple(items), latency_ms, outcome)


def make_descriptor(
    agent_id: str = "agent-a",
    domain: str = "travel",
    capabilities=("triple-match",),
    endpoint: str = "127.0.0.1:9000",
    last_seen: int = 0,
) -> AgentDescriptor:
    return AgentDescriptor(agent_id, domain, frozenset(capabilities), endpoint, last_seen)


HOTEL_KB = KnowledgeBase.of([
    ("hotel1", "name", "grand hotel"),
    ("hotel1", "located-in", "vienna"),
    ("hotel1", "has-feature", "wifi"),
    ("hotel2", "located-in", "graz"),
    ("hotel2", "has-feature", "wifi"),
])

# -----------------------------------------------------------------------
# Network fixtures
# -----------------------------------------------------------------------


@pytest.fixture
def registry_server():
    """A live registry listener on an ephemeral port; yields (registry, server)."""
    registry = AgentRegistry(ttl_ms=30_000)
    server = FrameServer("127.0.0.1", 0, RegistryEndpoint(registry))
    threading.Thread(target=server.serve_forever, daemon=True).start()
    yield registry, server
    server.shutdown()
    server.server_close()


@pytest.fixture
def spawn_agent():
    """Start sim-agents on ephemeral ports; all are stopped after the test."""
    running = []

    def _spawn(kb=HOTEL_KB, domain="travel", agent_id=None, behavior=ScriptedBehavior(),
               registry_endpoint=None, **kwargs):
        agent = serve(kb, "127.0.0.1:0", registry_endpoint, domain, behavior, agent_id=agent_id, **kwargs)
        running.append(agent)
        return agent

    yield _spawn
    for agent in running:
        agent.stop()


@pytest.fixture
def dead_endpoint() -> str:
    """An endpoint nothing listens on (bound, then released)."""
    import socket

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    return f"127.0.0.1:{port}"
