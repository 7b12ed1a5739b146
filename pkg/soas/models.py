"""Domain types shared by the pipeline stages and the wire protocol.

Every type converts to and from a plain JSON-ready structure with a fixed
field order (`to_wire` / `from_wire`). `from_wire` is strict: anything that
does not have exactly the expected shape raises ValueError, which the codec
turns into MalformedPayload.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field
from urllib.parse import quote, unquote

from rdflib import Namespace, URIRef, Variable
from rdflib.term import Node

from .utils import parse_endpoint

VARIABLE_RE = re.compile(r"\?[a-z][a-z0-9_]*")
ITEM_VAR = "?item"

# Every KB value (subject, predicate or object) becomes one IRI in this namespace.
_PREFIX = "urn:soas:"
SOAS = Namespace(_PREFIX)


def to_node(value: str) -> URIRef:
    return SOAS[quote(value, safe="")]


def from_node(node: Node) -> str:
    return unquote(str(node)[len(_PREFIX):])


def _expect(cond: bool, what: str) -> None:
    if not cond:
        raise ValueError(what)


def _str(value: object, what: str) -> str:
    _expect(isinstance(value, str), f"{what} must be a string")
    return value  # type: ignore[return-value]


def _int(value: object, what: str) -> int:
    _expect(isinstance(value, int) and not isinstance(value, bool), f"{what} must be an integer")
    return value  # type: ignore[return-value]


def _str_list(value: object, what: str) -> list[str]:
    _expect(isinstance(value, list), f"{what} must be a list")
    return [_str(v, what) for v in value]  # type: ignore[union-attr]


def _obj(value: object, keys: tuple[str, ...], what: str) -> dict:
    _expect(isinstance(value, dict), f"{what} must be an object")
    _expect(set(value) == set(keys), f"{what} must have fields {', '.join(keys)}")  # type: ignore[arg-type]
    return value  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# Requests and semantic queries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UserRequest:
    request_id: str
    text: str
    issued_at: int


class TermKind(enum.Enum):
    Literal = "Literal"
    Variable = "Variable"


@dataclass(frozen=True)
class Term:
    kind: TermKind
    value: str

    def __post_init__(self) -> None:
        if self.kind is TermKind.Variable:
            _expect(bool(VARIABLE_RE.fullmatch(self.value)), f'bad variable name "{self.value}"')
        else:
            _expect(bool(self.value) and self.value == self.value.lower(),
                    f'literal "{self.value}" must be non-empty lowercase')

    @classmethod
    def var(cls, name: str) -> Term:
        return cls(TermKind.Variable, name if name.startswith("?") else f"?{name}")

    @classmethod
    def lit(cls, value: str) -> Term:
        return cls(TermKind.Literal, value)

    @property
    def is_variable(self) -> bool:
        return self.kind is TermKind.Variable

    @property
    def node(self) -> Variable | URIRef:
        """rdflib form: a Variable, or the IRI of the literal value."""
        return Variable(self.value[1:]) if self.is_variable else to_node(self.value)

    def to_wire(self) -> str:
        return self.value

    @classmethod
    def from_wire(cls, value: object) -> Term:
        text = _str(value, "term")
        if text.startswith("?"):
            return cls(TermKind.Variable, text)
        return cls(TermKind.Literal, text)


@dataclass(frozen=True)
class TriplePattern:
    subject: Term
    predicate: Term
    object: Term

    @property
    def slots(self) -> tuple[Term, Term, Term]:
        return (self.subject, self.predicate, self.object)

    @property
    def is_fact_check(self) -> bool:
        """True when no slot is a variable: the pattern only checks one fact."""
        return not any(t.is_variable for t in self.slots)

    @property
    def nodes(self) -> tuple[Variable | URIRef, Variable | URIRef, Variable | URIRef]:
        return (self.subject.node, self.predicate.node, self.object.node)

    def to_wire(self) -> list[str]:
        return [t.to_wire() for t in self.slots]

    @classmethod
    def from_wire(cls, value: object) -> TriplePattern:
        _expect(isinstance(value, list) and len(value) == 3, "pattern must be a 3-element array")
        s, p, o = (Term.from_wire(v) for v in value)  # type: ignore[union-attr]
        return cls(s, p, o)

    def __str__(self) -> str:
        return f"({self.subject.value}, {self.predicate.value}, {self.object.value})"


@dataclass(frozen=True)
class SemanticQuery:
    request_id: str
    domain: str
    confidence: float
    keywords: tuple[str, ...]
    patterns: tuple[TriplePattern, ...]
    constraints: tuple[tuple[str, str], ...] = ()

    def constraint(self, key: str) -> str | None:
        for k, v in self.constraints:
            if k == key:
                return v
        return None

    def to_wire(self) -> dict:
        return {
            "request_id": self.request_id,
            "domain": self.domain,
            "confidence": self.confidence,
            "keywords": list(self.keywords),
            "patterns": [p.to_wire() for p in self.patterns],
            "constraints": [[k, v] for k, v in self.constraints],
        }

    @classmethod
    def from_wire(cls, value: object) -> SemanticQuery:
        d = _obj(value, ("request_id", "domain", "confidence", "keywords", "patterns", "constraints"),
                 "query")
        conf = d["confidence"]
        _expect(isinstance(conf, (int, float)) and not isinstance(conf, bool), "confidence must be a number")
        _expect(math.isfinite(conf) and 0.0 <= conf <= 1.0, "confidence must be in [0,1]")
        _expect(isinstance(d["patterns"], list), "patterns must be a list")
        _expect(isinstance(d["constraints"], list), "constraints must be a list")
        constraints = []
        for pair in d["constraints"]:
            _expect(isinstance(pair, list) and len(pair) == 2, "constraint must be a [key, value] pair")
            constraints.append((_str(pair[0], "constraint key"), _str(pair[1], "constraint value")))
        return cls(
            request_id=_str(d["request_id"], "request_id"),
            domain=_str(d["domain"], "domain"),
            confidence=float(conf),
            keywords=tuple(_str_list(d["keywords"], "keyword")),
            patterns=tuple(TriplePattern.from_wire(p) for p in d["patterns"]),
            constraints=tuple(constraints),
        )

    def to_json(self) -> str:
        """Canonical serialization: compact JSON in the fixed field order."""
        return json.dumps(self.to_wire(), separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> SemanticQuery:
        return cls.from_wire(json.loads(text))


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AgentDescriptor:
    agent_id: str
    domain: str
    capabilities: frozenset[str]
    endpoint: str
    last_seen: int = 0

    def validate(self) -> None:
        """Raise ValueError describing the first broken invariant."""
        _expect(bool(self.agent_id), "agent_id must be non-empty")
        _expect(bool(self.domain), "domain must be non-empty")
        _expect(bool(self.capabilities), "capabilities must be non-empty")
        _expect(all(isinstance(c, str) and c for c in self.capabilities), "capabilities must be non-empty strings")
        parse_endpoint(self.endpoint)

    def to_wire(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "domain": self.domain,
            "capabilities": sorted(self.capabilities),
            "endpoint": self.endpoint,
            "last_seen": self.last_seen,
        }

    @classmethod
    def from_wire(cls, value: object) -> AgentDescriptor:
        d = _obj(value, ("agent_id", "domain", "capabilities", "endpoint", "last_seen"), "descriptor")
        return cls(
            agent_id=_str(d["agent_id"], "agent_id"),
            domain=_str(d["domain"], "domain"),
            capabilities=frozenset(_str_list(d["capabilities"], "capability")),
            endpoint=_str(d["endpoint"], "endpoint"),
            last_seen=_int(d["last_seen"], "last_seen"),
        )


@dataclass(frozen=True)
class ResultItem:
    item_id: str
    title: str
    terms: frozenset[str]
    matched_patterns: int
    source_agent: str

    def to_wire(self) -> dict:
        return {
            "item_id": self.item_id,
            "title": self.title,
            "terms": sorted(self.terms),
            "matched_patterns": self.matched_patterns,
            "source_agent": self.source_agent,
        }

    @classmethod
    def from_wire(cls, value: object) -> ResultItem:
        d = _obj(value, ("item_id", "title", "terms", "matched_patterns", "source_agent"), "item")
        matched = _int(d["matched_patterns"], "matched_patterns")
        _expect(matched >= 0, "matched_patterns must be non-negative")
        return cls(
            item_id=_str(d["item_id"], "item_id"),
            title=_str(d["title"], "title"),
            terms=frozenset(_str_list(d["terms"], "term")),
            matched_patterns=matched,
            source_agent=_str(d["source_agent"], "source_agent"),
        )


class Outcome(enum.Enum):
    Ok = "Ok"
    Timeout = "Timeout"
    ConnectFailed = "ConnectFailed"
    ProtocolError = "ProtocolError"


@dataclass(frozen=True)
class AgentResponse:
    agent_id: str
    request_id: str
    items: tuple[ResultItem, ...] = ()
    latency_ms: int = 0
    outcome: Outcome = Outcome.Ok
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.outcome is Outcome.Ok

    def to_wire(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "request_id": self.request_id,
            "items": [i.to_wire() for i in self.items],
            "latency_ms": self.latency_ms,
            "outcome": self.outcome.value,
            "detail": self.detail,
        }

    @classmethod
    def from_wire(cls, value: object) -> AgentResponse:
        d = _obj(value, ("agent_id", "request_id", "items", "latency_ms", "outcome", "detail"), "response")
        _expect(isinstance(d["items"], list), "items must be a list")
        latency = _int(d["latency_ms"], "latency_ms")
        _expect(latency >= 0, "latency_ms must be non-negative")
        try:
            outcome = Outcome(d["outcome"])
        except ValueError:
            raise ValueError(f'unknown outcome "{d["outcome"]}"') from None
        return cls(
            agent_id=_str(d["agent_id"], "agent_id"),
            request_id=_str(d["request_id"], "request_id"),
            items=tuple(ResultItem.from_wire(i) for i in d["items"]),
            latency_ms=latency,
            outcome=outcome,
            detail=_str(d["detail"], "detail"),
        )


# ---------------------------------------------------------------------------
# Ranking output
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RankedResult:
    item: ResultItem
    score: float
    rank: int


@dataclass
class PipelineReport:
    request_id: str
    semantic_query: SemanticQuery
    agents_located: int = 0
    agent_outcomes: dict[str, Outcome] = field(default_factory=dict)
    results: list[RankedResult] = field(default_factory=list)
    elapsed_ms: int = 0
    trace: list[str] = field(default_factory=list)
