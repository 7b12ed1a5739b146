"""Broker configuration.

Settings come from a flat `module.key=value` file (python-dotenv syntax). The
file is chosen by --config, else the SOAS_CONFIG environment variable; with
neither, built-in defaults apply. Relative paths are resolved against the
directory of the config file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from dotenv import dotenv_values

from .comm import DEFAULT_MAX_PARALLEL, DEFAULT_OVERALL_DEADLINE_MS, DEFAULT_PER_AGENT_TIMEOUT_MS
from .errors import ConfigError
from .logs import get_logger
from .ranking import Weights
from .registry import DEFAULT_TTL_MS
from .render import FORMATS
from .utils import parse_endpoint
from .wire import MAX_FRAME_BYTES

logger = get_logger(__name__)

CONFIG_ENV = "SOAS_CONFIG"


@dataclass(frozen=True)
class HarnessAgent:
    agent_id: str
    domain: str
    kb_path: Path


def _csv(value: str) -> frozenset[str]:
    return frozenset(v.strip() for v in value.split(",") if v.strip())


@dataclass(frozen=True)
class Settings:
    rpu_stopwords_path: Path | None = None
    rpu_lexicon_path: Path | None = None
    registry_ttl_ms: int = DEFAULT_TTL_MS
    registry_endpoint: str = "127.0.0.1:0"
    registry_required_capabilities: frozenset[str] = frozenset()
    registry_discovery_wait_ms: int = 0
    comm_per_agent_timeout_ms: int = DEFAULT_PER_AGENT_TIMEOUT_MS
    comm_overall_deadline_ms: int = DEFAULT_OVERALL_DEADLINE_MS
    comm_max_parallel: int = DEFAULT_MAX_PARALLEL
    comm_max_frame_bytes: int = MAX_FRAME_BYTES
    store_journal_path: Path | None = None
    rank_keyword_weight: float = 0.5
    rank_pattern_weight: float = 0.5
    pa_request_id_prefix: str = ""
    pa_format: str = "table"
    agent_heartbeat_ms: int = 10_000
    agent_capabilities: frozenset[str] = frozenset({"triple-match"})
    harness_agents: tuple[HarnessAgent, ...] = field(default_factory=tuple)

    @property
    def weights(self) -> Weights:
        return Weights(self.rank_keyword_weight, self.rank_pattern_weight)

    def validate(self) -> Settings:
        positive = ("comm_per_agent_timeout_ms", "comm_overall_deadline_ms", "comm_max_parallel",
                    "comm_max_frame_bytes", "agent_heartbeat_ms")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{_key(name)} must be positive")
        for name in ("registry_ttl_ms", "registry_discovery_wait_ms"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{_key(name)} must not be negative")
        if self.comm_overall_deadline_ms < self.comm_per_agent_timeout_ms:
            raise ConfigError("comm.overall_deadline_ms must be >= comm.per_agent_timeout_ms")
        try:
            self.weights
        except ValueError as e:
            raise ConfigError(str(e)) from None
        try:
            parse_endpoint(self.registry_endpoint)
        except ValueError as e:
            raise ConfigError(f"registry.endpoint: {e}") from None
        if self.pa_format not in FORMATS:
            raise ConfigError(f"pa.format must be one of: {', '.join(FORMATS)}")
        if not self.agent_capabilities:
            raise ConfigError("agent.capabilities must name at least one capability")
        return self


def _key(attr: str) -> str:
    module, _, rest = attr.partition("_")
    return f"{module}.{rest}"


_FIELD_TYPES = {f.name: f.type for f in fields(Settings)}
KNOWN_KEYS = tuple(_key(name) for name in _FIELD_TYPES)


def _parse_harness(value: str, base: Path) -> tuple[HarnessAgent, ...]:
    agents = []
    for entry in value.split(";"):
        entry = entry.strip()
        if not entry:
            continue
        parts = entry.split(":", 2)
        if len(parts) != 3 or not all(p.strip() for p in parts):
            raise ConfigError(f'harness.agents entry "{entry}" is not agent_id:domain:kb_path')
        agent_id, domain, kb = (p.strip() for p in parts)
        agents.append(HarnessAgent(agent_id, domain.lower(), _path(kb, base)))
    ids = [a.agent_id for a in agents]
    if len(ids) != len(set(ids)):
        raise ConfigError("harness.agents has duplicate agent ids")
    return tuple(agents)


def _path(value: str, base: Path) -> Path:
    p = Path(value).expanduser()
    return p if p.is_absolute() else base / p


def _convert(attr: str, raw: str, base: Path) -> object:
    kind = _FIELD_TYPES[attr]
    if attr == "harness_agents":
        return _parse_harness(raw, base)
    if kind == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{_key(attr)} must be an integer, got {raw!r}") from None
    if kind == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{_key(attr)} must be a number, got {raw!r}") from None
    if kind.startswith("Path"):
        return _path(raw, base) if raw else None
    if kind.startswith("frozenset"):
        return _csv(raw)
    return raw


def settings_from_mapping(values: dict[str, str | None], base: Path | None = None) -> Settings:
    base = base or Path.cwd()
    kwargs = {}
    for key, raw in values.items():
        attr = key.replace(".", "_", 1)
        if "." not in key or attr not in _FIELD_TYPES:
            raise ConfigError(f"Unknown config key {key!r}")
        kwargs[attr] = _convert(attr, (raw or "").strip(), base)
    return Settings(**kwargs).validate()


def config_path(explicit: str | Path | None = None) -> Path | None:
    if explicit:
        return Path(explicit)
    env = os.environ.get(CONFIG_ENV)
    return Path(env) if env else None


def load_settings(path: str | Path | None = None) -> Settings:
    """Settings from `path`, else $SOAS_CONFIG, else defaults."""
    resolved = config_path(path)
    if resolved is None:
        return Settings().validate()
    if not resolved.is_file():
        raise ConfigError(f"Config file not found: {resolved}")
    values = dotenv_values(resolved, interpolate=False)
    logger.debug("loaded %d config keys from %s", len(values), resolved)
    return settings_from_mapping(dict(values), resolved.resolve().parent)
