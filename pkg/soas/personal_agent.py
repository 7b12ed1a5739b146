"""Personal Agent and pipeline orchestration.

The PA takes a full-text request and runs it through every unit in order:
RPU -> AL -> AC -> DB -> LB -> RG, recording each stage in the report trace.
The Broker owns the shared state those stages use: registry, registry
listener, result store and the seeded harness agents.
"""

from __future__ import annotations

import os
import threading
import time
from collections.abc import Callable, Iterable

from .comm import QueryFn, fan_out
from .config import Settings
from .errors import NoAgentsAvailable, NoAgentsResponded, StorageFailure
from .logs import get_logger
from .models import PipelineReport, UserRequest
from .ranking import rank
from .registry import AgentRegistry, RegistryEndpoint
from .render import RenderedOutput, render
from .request import DEFAULT_LEXICON, DEFAULT_STOPWORDS, build_semantic_query, load_lexicon, load_stopwords
from .sim_agents import SimAgent, load_knowledge_base, serve
from .store import ResultStore
from .utils import format_endpoint, now_ms, parse_endpoint
from .wire import FrameServer

logger = get_logger(__name__)

STAGES = ("PA", "RPU", "AL", "AC", "DB", "LB", "RG")


class RequestIdGenerator:
    """Monotonic request ids "<prefix>-<n>", prefix defaulting to a process-start token."""

    def __init__(self, prefix: str | None = None, start: int = 1):
        self.prefix = prefix or f"{os.getpid():x}{now_ms():x}"
        self._next = start
        self._lock = threading.Lock()

    def __call__(self) -> str:
        with self._lock:
            n = self._next
            self._next += 1
        return f"{self.prefix}-{n:06d}"

    def skip_past(self, taken: Iterable[str]) -> None:
        """Never hand out an id in `taken` (e.g. ids replayed from the journal)."""
        highest = 0
        for request_id in taken:
            head, _, tail = request_id.rpartition("-")
            if head == self.prefix and tail.isdigit():
                highest = max(highest, int(tail))
        with self._lock:
            self._next = max(self._next, highest + 1)


class Broker:
    """Registry + listener + store + harness agents, started and stopped together."""

    def __init__(self, settings: Settings, clock: Callable[[], int] = now_ms):
        self.settings = settings
        self.clock = clock
        self.registry = AgentRegistry(settings.registry_ttl_ms)
        self.store = ResultStore(settings.store_journal_path)
        self.request_ids = RequestIdGenerator(settings.pa_request_id_prefix or None)
        self.request_ids.skip_past(self.store.request_ids())
        self.server: FrameServer | None = None
        self.agents: list[SimAgent] = []

    @property
    def registry_endpoint(self) -> str | None:
        return self.server.endpoint if self.server else None

    def start(self) -> Broker:
        s = self.settings
        host, port = parse_endpoint(s.registry_endpoint)
        self.server = FrameServer(host, port, RegistryEndpoint(self.registry, self.clock), s.comm_max_frame_bytes)
        threading.Thread(target=self.server.serve_forever, name="soas-registry", daemon=True).start()
        logger.info("registry listening on %s", self.server.endpoint)

        for entry in s.harness_agents:
            kb = load_knowledge_base(entry.kb_path)
            self.agents.append(serve(
                kb, format_endpoint(host, 0), self.server.endpoint, entry.domain,
                agent_id=entry.agent_id, capabilities=s.agent_capabilities,
                heartbeat_ms=s.agent_heartbeat_ms,
                max_frame_bytes=s.comm_max_frame_bytes,
            ))
        if s.registry_discovery_wait_ms:
            logger.info("waiting %d ms for agents to register", s.registry_discovery_wait_ms)
            time.sleep(s.registry_discovery_wait_ms / 1000)
        return self

    def stop(self) -> None:
        for agent in self.agents:
            agent.stop()
        self.agents.clear()
        if self.server is not None:
            self.server.shutdown()
            self.server.server_close()
            self.server = None
        self.store.close()

    def __enter__(self) -> Broker:
        try:
            return self.start()
        except BaseException:
            self.stop()
            raise

    def __exit__(self, *exc) -> None:
        self.stop()


class PersonalAgent:
    def __init__(
        self,
        broker: Broker,
        request_ids: Callable[[], str] | None = None,
        query_fn: QueryFn | None = None,
    ):
        s = broker.settings
        self.broker = broker
        self.settings = s
        self.stopwords = load_stopwords(s.rpu_stopwords_path) if s.rpu_stopwords_path else DEFAULT_STOPWORDS
        self.lexicon = load_lexicon(s.rpu_lexicon_path) if s.rpu_lexicon_path else DEFAULT_LEXICON
        self.request_ids = request_ids or broker.request_ids
        self.query_fn = query_fn

    def handle_request(
        self,
        text: str,
        fmt: str | None = None,
        constraints: Iterable[tuple[str, str]] = (),
    ) -> tuple[RenderedOutput, PipelineReport]:
        s = self.settings
        clock = self.broker.clock
        started = time.monotonic()
        trace = ["PA"]
        request = UserRequest(self.request_ids(), text, clock())
        if self.broker.store.fetch(request.request_id):
            raise StorageFailure(f'Request id "{request.request_id}" already has stored responses.')

        trace.append("RPU")
        query = build_semantic_query(request, self.stopwords, self.lexicon, constraints)
        report = PipelineReport(request.request_id, query, trace=trace)

        trace.append("AL")
        agents = self.broker.registry.locate(query.domain, s.registry_required_capabilities, clock())
        if not agents:
            raise NoAgentsAvailable(query.domain)
        report.agents_located = len(agents)

        trace.append("AC")
        responses = fan_out(
            query, agents,
            per_agent_timeout_ms=s.comm_per_agent_timeout_ms,
            overall_deadline_ms=s.comm_overall_deadline_ms,
            max_parallel=s.comm_max_parallel,
            query_fn=self.query_fn,
        )
        report.agent_outcomes = {r.agent_id: r.outcome for r in responses}

        trace.append("DB")
        store = self.broker.store
        for response in responses:
            store.persist(request.request_id, response)
        stored = store.fetch(request.request_id)
        if not any(r.ok for r in stored):
            raise NoAgentsResponded({aid: o.value for aid, o in report.agent_outcomes.items()})

        trace.append("LB")
        results = rank(stored, query, s.weights)
        limit = _limit(query.constraint("limit"))
        if limit is not None:
            results = results[:limit]
        report.results = results

        trace.append("RG")
        output = render(results, fmt or s.pa_format, report.agent_outcomes, request.request_id)
        report.elapsed_ms = int((time.monotonic() - started) * 1000)
        logger.info("request %s: %d results from %d agents in %d ms",
                    request.request_id, len(results), len(agents), report.elapsed_ms)
        return output, report


def _limit(raw: str | None) -> int | None:
    if raw is None:
        return None
    if raw.isdigit() and int(raw) > 0:
        return int(raw)
    logger.warning("ignoring limit=%r: not a positive integer", raw)
    return None
