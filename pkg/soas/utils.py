"""Shared utilities for soas."""

import re
import time
from datetime import datetime

_NON_ALNUM = re.compile(r"[\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on every non-alphanumeric character, drop tokens shorter than 2."""
    return [t for t in _NON_ALNUM.split(text.lower()) if len(t) >= 2]


def now_ms() -> int:
    return int(time.time() * 1000)


def parse_endpoint(value: str) -> tuple[str, int]:
    """Split "host:port" into (host, port). Raises ValueError on anything else."""
    host, sep, port_text = value.rpartition(":")
    if not sep or not host or not port_text.isdigit():
        raise ValueError(f'endpoint "{value}" is not host:port')
    port = int(port_text)
    if not 0 <= port <= 65535:
        raise ValueError(f'endpoint "{value}" has a port outside 0-65535')
    return host, port


def format_endpoint(host: str, port: int) -> str:
    return f"{host}:{port}"


def format_ts_ms(ts_ms: int | None) -> str:
    """Format millisecond timestamp as ISO 8601 with local timezone."""
    if ts_ms is None:
        return ""
    try:
        return datetime.fromtimestamp(ts_ms / 1000).astimezone().isoformat()
    except (ValueError, OSError):
        return ""
