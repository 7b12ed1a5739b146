"""Agent Locator: a TTL directory of domain agents.

Agents push their descriptor (REGISTER) and refresh it by registering again;
an entry counts as available while now - last_seen <= ttl_ms.
"""

from __future__ import annotations

import threading
from collections.abc import Iterable
from dataclasses import replace

from .errors import InvalidDescriptor
from .logs import get_logger
from .models import AgentDescriptor
from .utils import now_ms
from .wire import ErrorBody, FrameHandler, Message, MessageKind, Reply

logger = get_logger(__name__)

DEFAULT_TTL_MS = 30_000
GENERAL_DOMAIN = "general"


class AgentRegistry:
    """Thread-safe registry. Every operation runs under one lock, so readers
    only ever see whole updates."""

    def __init__(self, ttl_ms: int = DEFAULT_TTL_MS):
        if ttl_ms < 0:
            raise ValueError("ttl_ms must be non-negative")
        self.ttl_ms = ttl_ms
        self._entries: dict[str, AgentDescriptor] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def register(self, descriptor: AgentDescriptor, now: int) -> AgentDescriptor:
        try:
            descriptor.validate()
        except ValueError as e:
            raise InvalidDescriptor(f'Invalid descriptor "{descriptor.agent_id}": {e}') from None
        stored = replace(descriptor, capabilities=frozenset(descriptor.capabilities), last_seen=now)
        with self._lock:
            fresh = stored.agent_id not in self._entries
            self._entries[stored.agent_id] = stored
        if fresh:
            logger.info("registered %s (%s) at %s", stored.agent_id, stored.domain, stored.endpoint)
        return stored

    def deregister(self, agent_id: str) -> None:
        with self._lock:
            removed = self._entries.pop(agent_id, None)
        if removed is not None:
            logger.info("deregistered %s", agent_id)

    def _live(self, entry: AgentDescriptor, now: int) -> bool:
        return now - entry.last_seen <= self.ttl_ms

    def locate(
        self, domain: str, required_capabilities: Iterable[str] = (), now: int | None = None,
    ) -> list[AgentDescriptor]:
        """Live agents of `domain` offering every required capability, sorted by agent_id.

        The domain "general" matches every live agent.
        """
        now = now_ms() if now is None else now
        required = frozenset(required_capabilities)
        with self._lock:
            entries = list(self._entries.values())
        found = [
            e for e in entries
            if self._live(e, now)
            and (domain == GENERAL_DOMAIN or e.domain == domain)
            and required <= e.capabilities
        ]
        return sorted(found, key=lambda e: e.agent_id)

    def prune_expired(self, now: int | None = None) -> int:
        now = now_ms() if now is None else now
        with self._lock:
            stale = [aid for aid, e in self._entries.items() if not self._live(e, now)]
            for aid in stale:
                del self._entries[aid]
        if stale:
            logger.info("pruned %d expired agents: %s", len(stale), ", ".join(sorted(stale)))
        return len(stale)

    def snapshot(self) -> list[AgentDescriptor]:
        with self._lock:
            return sorted(self._entries.values(), key=lambda e: e.agent_id)


class RegistryEndpoint(FrameHandler):
    """Wire front of the registry: REGISTER -> ACK, PING -> PONG."""

    name = "registry"

    def __init__(self, registry: AgentRegistry, clock=now_ms):
        self.registry = registry
        self.clock = clock

    def handle(self, message: Message) -> Reply:
        if message.kind is MessageKind.REGISTER:
            assert isinstance(message.body, AgentDescriptor)
            try:
                self.registry.register(message.body, self.clock())
            except InvalidDescriptor as e:
                return message.reply(MessageKind.ERROR, ErrorBody("invalid-descriptor", str(e)))
            return message.reply(MessageKind.ACK)
        if message.kind is MessageKind.PING:
            return message.reply(MessageKind.PONG)
        return message.reply(
            MessageKind.ERROR, ErrorBody("unsupported", f"registry does not accept {message.kind.value}"),
        )
