"""Result Generator: ranked results to json (machines) or a table (humans)."""

from __future__ import annotations

import json
import re
from collections.abc import Mapping
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

from .errors import UnsupportedFormat
from .models import Outcome, RankedResult

FORMATS = ("json", "table")
TABLE_COLUMNS = ("rank", "score", "item_id", "title", "source_agent")
_CONTROL = re.compile(r"[\x00-\x1f\x7f-\x9f\u2028\u2029]")


@dataclass(frozen=True)
class RenderedOutput:
    format: str
    content: str


def format_score(score: float) -> str:
    """Three decimals, half-up on the shortest decimal form (0.4165 -> 0.417)."""
    return str(Decimal(repr(score)).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))


def _cell(text: str) -> str:
    """Table cells stay on one line."""
    return _CONTROL.sub(" ", text)


def _outcome_text(outcome: Outcome | str) -> str:
    return outcome.value if isinstance(outcome, Outcome) else str(outcome)


def _render_json(request_id: str, results: list[RankedResult], diagnostics: Mapping[str, Outcome | str]) -> str:
    doc = {
        "request_id": request_id,
        "results": [
            {
                "rank": r.rank,
                "score": float(format_score(r.score)),
                "item_id": r.item.item_id,
                "title": r.item.title,
                "source_agent": r.item.source_agent,
            }
            for r in results
        ],
        "diagnostics": {aid: _outcome_text(diagnostics[aid]) for aid in sorted(diagnostics)},
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def _render_table(request_id: str, results: list[RankedResult], diagnostics: Mapping[str, Outcome | str]) -> str:
    rows = [TABLE_COLUMNS] + [
        (str(r.rank), format_score(r.score), _cell(r.item.item_id), _cell(r.item.title), _cell(r.item.source_agent))
        for r in results
    ]
    widths = [max(len(row[c]) for row in rows) for c in range(len(TABLE_COLUMNS))]
    lines = [" | ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.append(f"# request {request_id}: {len(results)} results")
    for aid in sorted(diagnostics):
        lines.append(f"# {aid}: {_outcome_text(diagnostics[aid])}")
    return "\n".join(lines) + "\n"


def render(
    results: list[RankedResult],
    fmt: str,
    diagnostics: Mapping[str, Outcome | str],
    request_id: str = "",
) -> RenderedOutput:
    if fmt == "json":
        return RenderedOutput("json", _render_json(request_id, results, diagnostics))
    if fmt == "table":
        return RenderedOutput("table", _render_table(request_id, results, diagnostics))
    raise UnsupportedFormat(fmt)
