from __future__ import annotations

import threading
import time

import pytest

from soas.comm import fan_out, ping_agent, query_agent
from soas.errors import NoAgentsGiven
from soas.models import AgentResponse, Outcome
from soas.sim_agents import ScriptedBehavior
from soas.wire import FrameHandler, FrameServer, MessageKind

from .conftest import make_descriptor, make_item, make_query, pattern

WIFI_QUERY = make_query(("hotels", "wifi"), [pattern("has-feature", "wifi")])


class CannedResults(FrameHandler):
    """Answers every QUERY with the same RESULTS items."""

    def __init__(self, items):
        self.items = tuple(items)

    def handle(self, message):
        return message.reply(MessageKind.RESULTS, self.items)


@pytest.fixture
def canned_agent():
    servers = []

    def _start(*items):
        server = FrameServer("127.0.0.1", 0, CannedResults(items))
        threading.Thread(target=server.serve_forever, daemon=True).start()
        servers.append(server)
        return make_descriptor("hotels", endpoint=server.endpoint)

    yield _start
    for server in servers:
        server.shutdown()
        server.server_close()


class TestQueryAgent:
    def test_ok(self, spawn_agent):
        agent = spawn_agent(agent_id="hotels")
        response = query_agent(agent.descriptor, WIFI_QUERY, timeout_ms=2000)
        assert response.outcome is Outcome.Ok
        assert response.request_id == WIFI_QUERY.request_id
        assert [i.item_id for i in response.items] == ["hotel1", "hotel2"]
        assert {i.source_agent for i in response.items} == {"hotels"}

    def test_timeout(self, spawn_agent):
        agent = spawn_agent(behavior=ScriptedBehavior.delay(5000))
        started = time.monotonic()
        response = query_agent(agent.descriptor, WIFI_QUERY, timeout_ms=100)
        assert response.outcome is Outcome.Timeout
        assert response.items == ()
        assert time.monotonic() - started < 1.0

    def test_connect_failed(self, dead_endpoint):
        response = query_agent(make_descriptor("gone", endpoint=dead_endpoint), WIFI_QUERY, timeout_ms=500)
        assert response.outcome is Outcome.ConnectFailed
        assert response.agent_id == "gone"

    def test_bad_endpoint_is_connect_failed(self):
        response = query_agent(make_descriptor(endpoint="nowhere"), WIFI_QUERY, timeout_ms=500)
        assert response.outcome is Outcome.ConnectFailed

    def test_malformed_reply_is_protocol_error(self, spawn_agent):
        agent = spawn_agent(behavior=ScriptedBehavior("malformed"))
        response = query_agent(agent.descriptor, WIFI_QUERY, timeout_ms=2000)
        assert response.outcome is Outcome.ProtocolError

    def test_dropped_connection_is_protocol_error(self, spawn_agent):
        agent = spawn_agent(behavior=ScriptedBehavior("drop"))
        response = query_agent(agent.descriptor, WIFI_QUERY, timeout_ms=2000)
        assert response.outcome is Outcome.ProtocolError

    def test_registry_is_not_an_agent(self, registry_server):
        _, server = registry_server
        response = query_agent(make_descriptor(endpoint=server.endpoint), WIFI_QUERY, timeout_ms=2000)
        assert response.outcome is Outcome.ProtocolError
        assert "unsupported" in response.detail

    def test_items_checked_against_query_and_agent(self, canned_agent):
        descriptor = canned_agent(make_item("hotel1", source="hotels", matched=1))
        response = query_agent(descriptor, WIFI_QUERY, timeout_ms=2000)
        assert response.outcome is Outcome.Ok
        assert [i.item_id for i in response.items] == ["hotel1"]

    @pytest.mark.parametrize("item", [
        make_item("hotel1", source="hotels", matched=2),
        make_item("hotel1", source="hotels", matched=0),
        make_item("hotel1", source="someone-else", matched=1),
    ])
    def test_inconsistent_items_are_protocol_error(self, canned_agent, item):
        descriptor = canned_agent(make_item("hotel0", source="hotels"), item)
        response = query_agent(descriptor, WIFI_QUERY, timeout_ms=2000)
        assert response.outcome is Outcome.ProtocolError
        assert response.items == ()
        assert response.detail

    def test_timeout_must_be_positive(self):
        with pytest.raises(ValueError):
            query_agent(make_descriptor(), WIFI_QUERY, timeout_ms=0)


class TestFanOut:
    def test_one_response_per_agent_sorted(self, spawn_agent, dead_endpoint):
        agents = [
            spawn_agent(agent_id="c-agent").descriptor,
            make_descriptor("b-dead", endpoint=dead_endpoint),
            spawn_agent(agent_id="a-agent").descriptor,
        ]
        responses = fan_out(WIFI_QUERY, agents, per_agent_timeout_ms=1000, overall_deadline_ms=2000)
        assert [r.agent_id for r in responses] == ["a-agent", "b-dead", "c-agent"]
        assert [r.outcome for r in responses] == [Outcome.Ok, Outcome.ConnectFailed, Outcome.Ok]

    def test_no_agents(self):
        with pytest.raises(NoAgentsGiven):
            fan_out(WIFI_QUERY, [])

    @pytest.mark.parametrize("kwargs", [
        {"max_parallel": 0},
        {"per_agent_timeout_ms": 500, "overall_deadline_ms": 100},
    ])
    def test_bad_parameters(self, kwargs):
        with pytest.raises(ValueError):
            fan_out(WIFI_QUERY, [make_descriptor()], **kwargs)

    def test_max_parallel_is_respected(self):
        lock = threading.Lock()
        in_flight = 0
        peak = 0

        def counting(descriptor, query, timeout_ms):
            nonlocal in_flight, peak
            with lock:
                in_flight += 1
                peak = max(peak, in_flight)
            time.sleep(0.02)
            with lock:
                in_flight -= 1
            return AgentResponse(descriptor.agent_id, query.request_id)

        agents = [make_descriptor(f"agent-{i:02d}") for i in range(12)]
        responses = fan_out(WIFI_QUERY, agents, max_parallel=3, query_fn=counting)
        assert len(responses) == 12
        assert 1 <= peak <= 3

    def test_overall_deadline_reports_timeout(self):
        def stuck(descriptor, query, timeout_ms):
            if descriptor.agent_id == "slow":
                time.sleep(1.0)
            return AgentResponse(descriptor.agent_id, query.request_id)

        agents = [make_descriptor("fast"), make_descriptor("slow")]
        started = time.monotonic()
        responses = fan_out(WIFI_QUERY, agents, per_agent_timeout_ms=100, overall_deadline_ms=200,
                            query_fn=stuck)
        assert time.monotonic() - started < 0.9
        assert {r.agent_id: r.outcome for r in responses} == {"fast": Outcome.Ok, "slow": Outcome.Timeout}

    def test_raising_query_fn_is_contained(self):
        def broken(descriptor, query, timeout_ms):
            raise RuntimeError("boom")

        (response,) = fan_out(WIFI_QUERY, [make_descriptor("x")], query_fn=broken)
        assert response.outcome is Outcome.ProtocolError
        assert "boom" in response.detail

    def test_slow_agent_does_not_hold_back_others(self, spawn_agent):
        agents = [
            spawn_agent(agent_id="quick").descriptor,
            spawn_agent(agent_id="sleepy", behavior=ScriptedBehavior.delay(5000)).descriptor,
        ]
        started = time.monotonic()
        responses = fan_out(WIFI_QUERY, agents, per_agent_timeout_ms=100, overall_deadline_ms=1000)
        assert time.monotonic() - started < 1.5
        assert {r.agent_id: r.outcome for r in responses} == {"quick": Outcome.Ok, "sleepy": Outcome.Timeout}


class TestPing:
    def test_ping_live_agent(self, spawn_agent):
        assert ping_agent(spawn_agent().endpoint)

    def test_ping_dead_endpoint(self, dead_endpoint):
        assert not ping_agent(dead_endpoint, timeout_ms=300)
