"""Result store: agent responses per request, with an optional append-only journal.

The journal is UTF-8 JSON lines, one {"request_id", "response"} object per
line, fsynced before persist() returns and replayed when the store opens.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path

from .errors import RequestIdMismatch, StorageFailure
from .logs import get_logger
from .models import AgentResponse

logger = get_logger(__name__)


class ResultStore:
    def __init__(self, journal_path: str | Path | None = None):
        self.journal_path = Path(journal_path) if journal_path else None
        self._batches: dict[str, list[AgentResponse]] = {}
        self._batch_locks: dict[str, threading.Lock] = {}
        self._map_lock = threading.Lock()
        self._journal_lock = threading.Lock()
        self._journal = None
        if self.journal_path is not None:
            self._replay()
            try:
                self.journal_path.parent.mkdir(parents=True, exist_ok=True)
                self._journal = open(self.journal_path, "a", encoding="utf-8", newline="\n")
            except OSError as e:
                raise StorageFailure(f"Cannot open journal {self.journal_path}: {e}") from e

    def __enter__(self) -> ResultStore:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        with self._journal_lock:
            if self._journal is not None:
                self._journal.close()
                self._journal = None

    def _replay(self) -> None:
        path = self.journal_path
        assert path is not None
        if not path.exists():
            return
        try:
            data = path.read_bytes()
        except OSError as e:
            raise StorageFailure(f"Cannot read journal {path}: {e}") from e
        lines = data.split(b"\n")
        # A crash mid-write leaves a final line without its newline, possibly
        # cut inside a multi-byte character.
        tail = lines.pop()
        if tail.strip():
            logger.warning("journal %s: ignoring partial trailing record", path)
        count = 0
        for line_no, raw in enumerate(lines, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw.decode("utf-8"))
                if not isinstance(record, dict) or set(record) != {"request_id", "response"}:
                    raise ValueError("record must have request_id and response")
                response = AgentResponse.from_wire(record["response"])
                if response.request_id != record["request_id"]:
                    raise ValueError("request_id does not match its response")
            except (UnicodeDecodeError, json.JSONDecodeError, ValueError, TypeError) as e:
                raise StorageFailure(f"Corrupt journal {path} line {line_no}: {e}") from e
            self._batches.setdefault(response.request_id, []).append(response)
            count += 1
        logger.info("replayed %d responses for %d requests from %s", count, len(self._batches), path)
        if tail:
            # Drop the partial record so the next append starts on a fresh line.
            try:
                with open(path, "r+b") as f:
                    f.truncate(len(data) - len(tail))
            except OSError as e:
                raise StorageFailure(f"Cannot repair journal {path}: {e}") from e

    def _lock_for(self, request_id: str) -> threading.Lock:
        with self._map_lock:
            lock = self._batch_locks.get(request_id)
            if lock is None:
                lock = self._batch_locks[request_id] = threading.Lock()
            return lock

    def _write_journal(self, request_id: str, response: AgentResponse) -> None:
        line = json.dumps({"request_id": request_id, "response": response.to_wire()},
                          separators=(",", ":"), ensure_ascii=False)
        with self._journal_lock:
            if self._journal is None:
                raise StorageFailure("Journal is closed.")
            try:
                self._journal.write(line + "\n")
                self._journal.flush()
                os.fsync(self._journal.fileno())
            except OSError as e:
                raise StorageFailure(f"Cannot append to journal {self.journal_path}: {e}") from e

    def persist(self, request_id: str, response: AgentResponse) -> None:
        if response.request_id != request_id:
            raise RequestIdMismatch(request_id, response.request_id)
        with self._lock_for(request_id):
            if self.journal_path is not None:
                self._write_journal(request_id, response)
            with self._map_lock:
                self._batches.setdefault(request_id, []).append(response)

    def fetch(self, request_id: str) -> list[AgentResponse]:
        with self._map_lock:
            return list(self._batches.get(request_id, ()))

    def request_ids(self) -> list[str]:
        with self._map_lock:
            return sorted(self._batches)
