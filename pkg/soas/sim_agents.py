"""Simulated domain agents.

Each agent serves an immutable triple knowledge base over the frame protocol,
answers QUERY messages by pattern matching and keeps itself registered with
the Agent Locator by re-registering on a heartbeat.
"""

from __future__ import annotations

import threading
from collections import defaultdict
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

from rdflib import Graph, Variable
from rdflib.term import Node

from .comm import register_with
from .errors import IoFailure, MalformedLine, RegistrationFailure
from .logs import get_logger
from .models import AgentDescriptor, ResultItem, SemanticQuery, TriplePattern, from_node, to_node
from .utils import parse_endpoint, tokenize
from .wire import MAX_FRAME_BYTES, ErrorBody, FrameHandler, FrameServer, Message, MessageKind, Reply

logger = get_logger(__name__)

Triple = tuple[str, str, str]

NAME_PREDICATE = "name"
NAME = to_node(NAME_PREDICATE)
DEFAULT_CAPABILITIES = frozenset({"triple-match"})


# ---------------------------------------------------------------------------
# Knowledge base
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KnowledgeBase:
    """Immutable triples, held in an rdflib Graph for pattern lookups."""

    triples: tuple[Triple, ...] = ()
    graph: Graph = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        graph = Graph()
        for s, p, o in self.triples:
            graph.add((to_node(s), to_node(p), to_node(o)))
        object.__setattr__(self, "graph", graph)

    @classmethod
    def of(cls, triples: Iterable[Triple]) -> KnowledgeBase:
        """Build a KB from raw triples: lowercased, duplicates collapsed, order kept."""
        clean = []
        for s, p, o in triples:
            t = (s.strip().lower(), p.strip().lower(), o.strip().lower())
            if not all(t):
                raise ValueError(f"triple {t} has an empty slot")
            clean.append(t)
        return cls(tuple(dict.fromkeys(clean)))

    def __len__(self) -> int:
        return len(self.triples)


def load_knowledge_base(path: str | Path) -> KnowledgeBase:
    """Parse `subject<TAB>predicate<TAB>object` lines; "#" comments and blanks ignored."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise IoFailure(f"Cannot read knowledge base {path}: {e}") from e
    triples: list[Triple] = []
    for line_no, line in enumerate(text.split("\n"), start=1):
        line = line.removesuffix("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise MalformedLine(str(path), line_no, f"expected 3 TAB-separated fields, got {len(fields)}")
        if not all(f.strip() for f in fields):
            raise MalformedLine(str(path), line_no, "empty field")
        triples.append((fields[0], fields[1], fields[2]))
    kb = KnowledgeBase.of(triples)
    logger.debug("loaded %d triples from %s", len(kb), path)
    return kb


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------

def _consistent(pattern: TriplePattern, nodes: tuple[Node, Node, Node]) -> bool:
    bindings: dict[Variable, Node] = {}
    for term, node in zip(pattern.nodes, nodes):
        if isinstance(term, Variable):
            if bindings.setdefault(term, node) != node:
                return False
        elif term != node:
            return False
    return True


def matches(pattern: TriplePattern, triple: Triple) -> bool:
    """Literal slots must be equal; a variable binds, consistently if it repeats."""
    return _consistent(pattern, (to_node(triple[0]), to_node(triple[1]), to_node(triple[2])))


def answer(kb: KnowledgeBase, query: SemanticQuery, agent_id: str = "") -> list[ResultItem]:
    """Items matching at least one query pattern, one per subject, sorted by item_id."""
    graph = kb.graph
    satisfied: dict[Node, set[TriplePattern]] = defaultdict(set)
    for pattern in query.patterns:
        lookup = tuple(None if isinstance(n, Variable) else n for n in pattern.nodes)
        for triple in graph.triples(lookup):
            if _consistent(pattern, triple):
                satisfied[triple[0]].add(pattern)

    items = []
    for subject in sorted(satisfied, key=from_node):
        names = sorted(from_node(o) for o in graph.objects(subject, NAME))
        terms = frozenset(tok for o in graph.objects(subject) for tok in tokenize(from_node(o)))
        items.append(ResultItem(
            item_id=from_node(subject),
            title=names[0] if names else from_node(subject),
            terms=terms,
            matched_patterns=len(satisfied[subject]),
            source_agent=agent_id,
        ))
    return items


# ---------------------------------------------------------------------------
# Serving
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScriptedBehavior:
    """Fault injection for harness tests: normal, delay, drop or malformed."""

    mode: str = "normal"
    delay_ms: int = 0

    MODES = ("normal", "delay", "drop", "malformed")

    def __post_init__(self) -> None:
        if self.mode not in self.MODES:
            raise ValueError(f"unknown scripted behavior {self.mode!r}")

    @classmethod
    def delay(cls, ms: int) -> ScriptedBehavior:
        return cls("delay", ms)


class SimAgentEndpoint(FrameHandler):
    def __init__(self, kb: KnowledgeBase, agent_id: str, behavior: ScriptedBehavior, stop: threading.Event):
        self.kb = kb
        self.agent_id = agent_id
        self.behavior = behavior
        self.name = f"agent {agent_id}"
        self._stop = stop

    def handle(self, message: Message) -> Reply:
        if message.kind is MessageKind.PING:
            return message.reply(MessageKind.PONG)
        if message.kind is not MessageKind.QUERY:
            return message.reply(MessageKind.ERROR, ErrorBody("unsupported", message.kind.value))
        assert isinstance(message.body, SemanticQuery)

        mode = self.behavior.mode
        if mode == "delay" and self._stop.wait(self.behavior.delay_ms / 1000):
            return None
        if mode == "drop":
            return None
        if mode == "malformed":
            garbage = b'{"kind":"RESULTS","request_id":'
            return len(garbage).to_bytes(4, "big") + garbage
        items = answer(self.kb, message.body, self.agent_id)
        return message.reply(MessageKind.RESULTS, tuple(items))


@dataclass
class SimAgent:
    """Handle on a running sim-agent."""

    descriptor: AgentDescriptor
    server: FrameServer
    registry_endpoint: str | None = None
    heartbeat_ms: int | None = None
    _stop: threading.Event = field(default_factory=threading.Event)
    _threads: list[threading.Thread] = field(default_factory=list)

    @property
    def agent_id(self) -> str:
        return self.descriptor.agent_id

    @property
    def endpoint(self) -> str:
        return self.descriptor.endpoint

    def _heartbeat(self) -> None:
        assert self.registry_endpoint and self.heartbeat_ms
        while not self._stop.wait(self.heartbeat_ms / 1000):
            try:
                register_with(self.registry_endpoint, self.descriptor)
            except RegistrationFailure as e:
                logger.warning("%s heartbeat failed: %s", self.agent_id, e)

    def wait(self) -> None:
        """Block until stop() is called."""
        self._stop.wait()

    def stop(self) -> None:
        if self._stop.is_set():
            return
        self._stop.set()
        self.server.shutdown()
        self.server.server_close()
        logger.info("agent %s stopped", self.agent_id)

    def __enter__(self) -> SimAgent:
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(
    kb: KnowledgeBase,
    endpoint: str,
    registry_endpoint: str | None,
    domain: str,
    scripted_behavior: ScriptedBehavior = ScriptedBehavior(),
    agent_id: str | None = None,
    capabilities: Iterable[str] = DEFAULT_CAPABILITIES,
    heartbeat_ms: int | None = None,
    require_registration: bool = True,
    max_frame_bytes: int = MAX_FRAME_BYTES,
) -> SimAgent:
    """Start an agent on endpoint (port 0 picks a free port) and register it.

    Raises BindFailure when the port is taken and RegistrationFailure when the
    registry does not ACK, unless require_registration is False.
    """
    host, port = parse_endpoint(endpoint)
    stop = threading.Event()
    handler = SimAgentEndpoint(kb, agent_id or "", scripted_behavior, stop)
    server = FrameServer(host, port, handler, max_frame_bytes)
    bound = server.endpoint
    agent_id = agent_id or f"{domain}-{bound.rpartition(':')[2]}"
    handler.agent_id = agent_id
    handler.name = f"agent {agent_id}"
    descriptor = AgentDescriptor(agent_id, domain, frozenset(capabilities), bound)
    agent = SimAgent(descriptor, server, registry_endpoint, heartbeat_ms, _stop=stop)

    t = threading.Thread(target=server.serve_forever, name=f"soas-agent-{agent_id}", daemon=True)
    t.start()
    agent._threads.append(t)
    logger.info("agent %s (%s, %d triples, %s) listening on %s",
                agent_id, domain, len(kb), scripted_behavior.mode, bound)

    if registry_endpoint:
        try:
            register_with(registry_endpoint, descriptor)
        except RegistrationFailure:
            if require_registration:
                agent.stop()
                raise
            logger.warning("agent %s: registry %s unreachable, will retry on heartbeat",
                           agent_id, registry_endpoint)
        if heartbeat_ms:
            hb = threading.Thread(target=agent._heartbeat, name=f"soas-heartbeat-{agent_id}", daemon=True)
            hb.start()
            agent._threads.append(hb)
    return agent
