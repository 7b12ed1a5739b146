from __future__ import annotations

import json
import time
from dataclasses import replace

import pytest

from soas import personal_agent
from soas.config import Settings, load_settings
from soas.errors import EmptyRequest, NoAgentsAvailable, NoAgentsResponded, StorageFailure
from soas.models import Outcome
from soas.personal_agent import STAGES, Broker, PersonalAgent, RequestIdGenerator
from soas.sim_agents import ScriptedBehavior

from .conftest import SEEDS, make_descriptor

SEED_REQUEST = "find hotels in vienna with wifi"


@pytest.fixture
def seeded():
    with Broker(load_settings(SEEDS / "soas.conf")) as broker:
        yield broker


@pytest.fixture
def broker():
    with Broker(Settings(comm_per_agent_timeout_ms=500, comm_overall_deadline_ms=1000)) as b:
        yield b


class TestRequestIds:
    def test_sequence(self):
        ids = RequestIdGenerator("run")
        assert [ids(), ids()] == ["run-000001", "run-000002"]

    def test_default_prefix_is_unique_per_generator(self):
        assert RequestIdGenerator()().endswith("-000001")

    def test_skip_past_taken_ids(self):
        ids = RequestIdGenerator("run")
        ids.skip_past(["run-000004", "run-000002", "other-000009", "run-x", "runner-000007"])
        assert ids() == "run-000005"

    def test_skip_past_never_moves_backwards(self):
        ids = RequestIdGenerator("run", start=10)
        ids.skip_past(["run-000003"])
        assert ids() == "run-000010"

    def test_agents_on_one_broker_share_the_sequence(self, seeded):
        first, second = PersonalAgent(seeded), PersonalAgent(seeded)
        _, a = first.handle_request(SEED_REQUEST)
        _, b = second.handle_request(SEED_REQUEST)
        assert (a.request_id, b.request_id) == ("seed-000001", "seed-000002")
        assert len(seeded.store.fetch(b.request_id)) == b.agents_located == 3
        assert all(r.request_id == b.request_id for r in seeded.store.fetch(b.request_id))

    def test_second_request_ranks_only_its_own_responses(self, seeded):
        _, a = PersonalAgent(seeded).handle_request(SEED_REQUEST)
        _, b = PersonalAgent(seeded).handle_request(SEED_REQUEST)
        assert [(r.rank, r.item.item_id) for r in b.results] == [(r.rank, r.item.item_id) for r in a.results]

    def test_reused_id_is_refused(self, seeded):
        PersonalAgent(seeded).handle_request(SEED_REQUEST)
        with pytest.raises(StorageFailure):
            PersonalAgent(seeded, request_ids=lambda: "seed-000001").handle_request(SEED_REQUEST)
        assert len(seeded.store.fetch("seed-000001")) == 3

    def test_restart_over_journal_continues_the_sequence(self, tmp_path):
        settings = replace(load_settings(SEEDS / "soas.conf"), store_journal_path=tmp_path / "j.jsonl")
        with Broker(settings) as b:
            assert PersonalAgent(b).handle_request(SEED_REQUEST)[1].request_id == "seed-000001"
        with Broker(settings) as b:
            _, report = PersonalAgent(b).handle_request(SEED_REQUEST)
            assert report.request_id == "seed-000002"
            assert len(b.store.fetch("seed-000001")) == len(b.store.fetch("seed-000002")) == 3


class TestSeededHarness:
    def test_expected_ranking(self, seeded):
        output, report = PersonalAgent(seeded).handle_request(SEED_REQUEST)
        doc = json.loads(output.content)
        assert doc["request_id"] == "seed-000001"
        assert [(r["rank"], r["item_id"], r["source_agent"], r["score"]) for r in doc["results"]] == [
            (1, "hotel-sacher", "city-hotels", 0.75),
            (2, "hostel-ruthensteiner", "city-hotels", 0.5),
            (3, "hotel-alpenhof", "alpine-stays", 0.476),
            (4, "pension-wien", "alpine-stays", 0.267),
            (5, "railjet-salzburg", "rail-trips", 0.238),
        ]
        assert doc["diagnostics"] == {"alpine-stays": "Ok", "city-hotels": "Ok", "rail-trips": "Ok"}
        assert report.agents_located == 3

    def test_top_item_satisfies_location_and_feature(self, seeded):
        _, report = PersonalAgent(seeded).handle_request(SEED_REQUEST)
        top = report.results[0]
        assert top.item.item_id == "hotel-sacher"
        assert {"vienna", "wifi"} <= top.item.terms

    def test_identical_output_across_runs(self):
        outputs = []
        for _ in range(10):
            with Broker(load_settings(SEEDS / "soas.conf")) as b:
                outputs.append(PersonalAgent(b).handle_request(SEED_REQUEST)[0].content.encode())
        assert len(set(outputs)) == 1

    def test_trace_follows_every_stage(self, seeded):
        _, report = PersonalAgent(seeded).handle_request(SEED_REQUEST)
        assert tuple(report.trace) == STAGES

    def test_responses_stored_before_ranking(self, seeded, monkeypatch):
        seen = []
        real_rank = personal_agent.rank

        def spy(responses, query, weights):
            seen.append(len(seeded.store.fetch(query.request_id)))
            return real_rank(responses, query, weights)

        monkeypatch.setattr(personal_agent, "rank", spy)
        PersonalAgent(seeded).handle_request(SEED_REQUEST)
        assert seen == [3]

    def test_limit_constraint(self, seeded):
        _, report = PersonalAgent(seeded).handle_request(SEED_REQUEST, constraints=[("limit", "2")])
        assert [r.item.item_id for r in report.results] == ["hotel-sacher", "hostel-ruthensteiner"]
        assert report.semantic_query.constraint("limit") == "2"

    def test_table_format(self, seeded):
        output, _ = PersonalAgent(seeded).handle_request(SEED_REQUEST, fmt="table")
        assert output.content.startswith("rank | score")

    def test_empty_request(self, seeded):
        with pytest.raises(EmptyRequest):
            PersonalAgent(seeded).handle_request("   ")


class TestFailures:
    def test_no_agents_for_domain(self, broker):
        with pytest.raises(NoAgentsAvailable):
            PersonalAgent(broker).handle_request(SEED_REQUEST)

    def test_no_agent_answers(self, broker, dead_endpoint):
        for aid in ("a", "b"):
            broker.registry.register(make_descriptor(aid, endpoint=dead_endpoint), broker.clock())
        with pytest.raises(NoAgentsResponded) as exc:
            PersonalAgent(broker).handle_request(SEED_REQUEST)
        assert exc.value.outcomes == {"a": "ConnectFailed", "b": "ConnectFailed"}

    def test_slow_agent_is_isolated(self, spawn_agent):
        settings = Settings(comm_per_agent_timeout_ms=100, comm_overall_deadline_ms=1000)
        with Broker(settings) as b:
            for aid in ("fast-1", "fast-2"):
                spawn_agent(agent_id=aid, registry_endpoint=b.registry_endpoint)
            spawn_agent(agent_id="slow", registry_endpoint=b.registry_endpoint,
                        behavior=ScriptedBehavior.delay(5000))
            started = time.monotonic()
            _, report = PersonalAgent(b).handle_request(SEED_REQUEST)
            elapsed = time.monotonic() - started
        assert elapsed < 1.5
        assert report.agent_outcomes == {"fast-1": Outcome.Ok, "fast-2": Outcome.Ok, "slow": Outcome.Timeout}
        assert {r.item.source_agent for r in report.results} <= {"fast-1", "fast-2"}
        assert report.results[0].item.item_id == "hotel1"

    def test_malformed_agent_is_protocol_error(self, spawn_agent, broker):
        spawn_agent(agent_id="good", registry_endpoint=broker.registry_endpoint)
        spawn_agent(agent_id="bad", registry_endpoint=broker.registry_endpoint,
                    behavior=ScriptedBehavior("malformed"))
        _, report = PersonalAgent(broker).handle_request(SEED_REQUEST)
        assert report.agent_outcomes["bad"] is Outcome.ProtocolError


class TestJournal:
    def test_responses_reach_the_journal(self, tmp_path):
        settings = replace(load_settings(SEEDS / "soas.conf"), store_journal_path=tmp_path / "j.jsonl")
        with Broker(settings) as b:
            PersonalAgent(b).handle_request(SEED_REQUEST)
        lines = (tmp_path / "j.jsonl").read_text(encoding="utf-8").splitlines()
        assert sorted(json.loads(line)["response"]["agent_id"] for line in lines) == [
            "alpine-stays", "city-hotels", "rail-trips",
        ]


class TestHarnessHeartbeat:
    def test_harness_agents_outlive_the_ttl(self):
        settings = replace(load_settings(SEEDS / "soas.conf"), registry_ttl_ms=300, agent_heartbeat_ms=100)
        with Broker(settings) as b:
            time.sleep(0.6)
            assert [d.agent_id for d in b.registry.locate("travel", now=b.clock())] == [
                "alpine-stays", "city-hotels", "rail-trips",
            ]
            _, report = PersonalAgent(b).handle_request(SEED_REQUEST)
        assert report.agents_located == 3
        assert set(report.agent_outcomes.values()) == {Outcome.Ok}

    def test_agent_without_heartbeat_expires(self, spawn_agent):
        with Broker(Settings(registry_ttl_ms=300)) as b:
            spawn_agent(agent_id="quiet", registry_endpoint=b.registry_endpoint)
            assert len(b.registry.locate("travel", now=b.clock())) == 1
            time.sleep(0.6)
            assert b.registry.locate("travel", now=b.clock()) == []
