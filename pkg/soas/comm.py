"""Agent Communicator: query located agents and gather their answers.

Per-agent failures are never raised; they come back as an AgentResponse whose
outcome says what went wrong.
"""

from __future__ import annotations

import concurrent.futures
import time
from collections.abc import Callable

from .errors import FrameError, NoAgentsGiven, RegistrationFailure
from .logs import get_logger
from .models import AgentDescriptor, AgentResponse, Outcome, SemanticQuery
from .wire import MAX_FRAME_BYTES, ErrorBody, Message, MessageKind, exchange

logger = get_logger(__name__)

DEFAULT_PER_AGENT_TIMEOUT_MS = 2000
DEFAULT_OVERALL_DEADLINE_MS = 5000
DEFAULT_MAX_PARALLEL = 8

QueryFn = Callable[[AgentDescriptor, SemanticQuery, int], AgentResponse]


def query_agent(
    descriptor: AgentDescriptor,
    query: SemanticQuery,
    timeout_ms: int,
    max_frame_bytes: int = MAX_FRAME_BYTES,
) -> AgentResponse:
    """Send QUERY to one agent and wait for RESULTS within timeout_ms."""
    if timeout_ms <= 0:
        raise ValueError("timeout_ms must be positive")
    started = time.monotonic()

    def done(outcome: Outcome, items=(), detail: str = "") -> AgentResponse:
        latency = int((time.monotonic() - started) * 1000)
        if outcome is not Outcome.Ok:
            logger.info("agent %s: %s %s", descriptor.agent_id, outcome.value, detail)
        return AgentResponse(
            agent_id=descriptor.agent_id,
            request_id=query.request_id,
            items=tuple(items),
            latency_ms=latency,
            outcome=outcome,
            detail=detail,
        )

    request = Message(MessageKind.QUERY, query.request_id, query)
    try:
        reply = exchange(descriptor.endpoint, request, timeout_ms / 1000, max_frame_bytes)
    except TimeoutError as e:
        return done(Outcome.Timeout, detail=str(e) or "timed out")
    except (ConnectionRefusedError, ValueError) as e:
        return done(Outcome.ConnectFailed, detail=str(e))
    except FrameError as e:
        return done(Outcome.ProtocolError, detail=str(e))
    except ConnectionError as e:
        # reset/aborted after the connection was up
        return done(Outcome.ProtocolError, detail=str(e))
    except OSError as e:
        return done(Outcome.ConnectFailed, detail=str(e))

    if reply.request_id != query.request_id:
        return done(Outcome.ProtocolError, detail=f'reply for "{reply.request_id}"')
    if reply.kind is MessageKind.ERROR:
        body = reply.body
        text = f"{body.code}: {body.text}" if isinstance(body, ErrorBody) else "error"
        return done(Outcome.ProtocolError, detail=f"agent error {text}")
    if reply.kind is not MessageKind.RESULTS:
        return done(Outcome.ProtocolError, detail=f"unexpected {reply.kind.value} reply")
    items = reply.body or ()
    problem = _check_items(items, descriptor, query)
    if problem:
        return done(Outcome.ProtocolError, detail=problem)
    return done(Outcome.Ok, items=items)


def _check_items(items, descriptor: AgentDescriptor, query: SemanticQuery) -> str:
    """Reason the items cannot have come from a correct answer to query, or ""."""
    limit = len(query.patterns)
    for item in items:
        if not 1 <= item.matched_patterns <= limit:
            return f"item {item.item_id} claims {item.matched_patterns} of {limit} patterns"
        if item.source_agent != descriptor.agent_id:
            return f"item {item.item_id} is attributed to {item.source_agent!r}"
    return ""


def fan_out(
    query: SemanticQuery,
    agents: list[AgentDescriptor],
    per_agent_timeout_ms: int = DEFAULT_PER_AGENT_TIMEOUT_MS,
    overall_deadline_ms: int = DEFAULT_OVERALL_DEADLINE_MS,
    max_parallel: int = DEFAULT_MAX_PARALLEL,
    query_fn: QueryFn | None = None,
) -> list[AgentResponse]:
    """Query every agent with at most max_parallel in flight.

    Returns one response per agent sorted by agent_id. Agents that have not
    answered when the overall deadline passes are reported as Timeout.
    """
    if not agents:
        raise NoAgentsGiven()
    if max_parallel < 1:
        raise ValueError("max_parallel must be at least 1")
    if overall_deadline_ms < per_agent_timeout_ms:
        raise ValueError("overall_deadline_ms must be >= per_agent_timeout_ms")
    query_fn = query_fn or query_agent
    deadline = time.monotonic() + overall_deadline_ms / 1000

    def run(descriptor: AgentDescriptor) -> AgentResponse:
        remaining_ms = int((deadline - time.monotonic()) * 1000)
        if remaining_ms <= 0:
            return AgentResponse(descriptor.agent_id, query.request_id,
                                 latency_ms=0, outcome=Outcome.Timeout, detail="overall deadline passed")
        return query_fn(descriptor, query, min(per_agent_timeout_ms, remaining_ms))

    ex = concurrent.futures.ThreadPoolExecutor(max_workers=max_parallel, thread_name_prefix="soas-ac")
    try:
        futures = {ex.submit(run, a): a for a in agents}
        finished, _ = concurrent.futures.wait(futures, timeout=max(deadline - time.monotonic(), 0))
        responses = []
        for fut, descriptor in futures.items():
            if fut in finished and fut.exception() is None:
                responses.append(fut.result())
                continue
            if fut in finished:
                # query_fn should not raise; if it does the agent still gets one response
                detail = f"query failed: {fut.exception()}"
                outcome = Outcome.ProtocolError
            else:
                fut.cancel()
                detail, outcome = "overall deadline passed", Outcome.Timeout
            responses.append(AgentResponse(descriptor.agent_id, query.request_id,
                                           latency_ms=overall_deadline_ms if outcome is Outcome.Timeout else 0,
                                           outcome=outcome, detail=detail))
    finally:
        ex.shutdown(wait=False, cancel_futures=True)

    responses.sort(key=lambda r: r.agent_id)
    ok = sum(r.ok for r in responses)
    logger.info("request %s: %d/%d agents answered", query.request_id, ok, len(responses))
    return responses


def ping_agent(endpoint: str, timeout_ms: int = 1000) -> bool:
    try:
        reply = exchange(endpoint, Message(MessageKind.PING, "ping"), timeout_ms / 1000)
    except (OSError, ValueError, FrameError):
        return False
    return reply.kind is MessageKind.PONG


def register_with(registry_endpoint: str, descriptor: AgentDescriptor, timeout_ms: int = 2000) -> None:
    """Push a REGISTER to a registry endpoint; RegistrationFailure unless it ACKs."""
    message = Message(MessageKind.REGISTER, f"register:{descriptor.agent_id}", descriptor)
    try:
        reply = exchange(registry_endpoint, message, timeout_ms / 1000)
    except (OSError, ValueError, FrameError) as e:
        raise RegistrationFailure(f"Cannot register {descriptor.agent_id} at {registry_endpoint}: {e}") from e
    if reply.kind is not MessageKind.ACK:
        detail = reply.body.text if isinstance(reply.body, ErrorBody) else reply.kind.value
        raise RegistrationFailure(f"Registry refused {descriptor.agent_id}: {detail}")
