"""Append-only, hash-chained audit log; the write-ahead record of all state.

One JSON line per record.  ``payload_hash`` covers the previous record's
hash plus this record's canonical body, so altering any line breaks every
hash after it.  A torn final line (crash mid-write) is discarded on load.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from eidpki.errors import PkiError
from eidpki.service.wire import canonical_json

log = logging.getLogger(__name__)

GENESIS = "0" * 64


@dataclass(frozen=True)
class AuditEvent:
    sequence: int
    time: int
    actor: str
    action: str
    subject: str
    payload: list[dict[str, Any]]
    payload_hash: str

    def body(self) -> dict:
        return {
            "sequence": self.sequence,
            "time": self.time,
            "actor": self.actor,
            "action": self.action,
            "subject": self.subject,
            "payload": self.payload,
        }

    def to_line(self) -> str:
        return canonical_json({**self.body(), "payload_hash": self.payload_hash}) + "\n"


def chain_hash(previous: str, body: dict) -> str:
    return hashlib.sha256((previous + canonical_json(body)).encode("utf-8")).hexdigest()


def verify_chain(events: list[AuditEvent]) -> int | None:
    """Sequence number of the first bad record, or None when the chain holds."""
    previous = GENESIS
    for expected_seq, event in enumerate(events, start=1):
        if event.sequence != expected_seq or chain_hash(previous, event.body()) != event.payload_hash:
            return event.sequence
        previous = event.payload_hash
    return None


def _parse(line: str) -> AuditEvent:
    d = json.loads(line)
    return AuditEvent(d["sequence"], d["time"], d["actor"], d["action"], d["subject"], d["payload"], d["payload_hash"])


class AuditLog:
    def __init__(self, path: Path | str | None = None, read_only: bool = False) -> None:
        self.path = Path(path) if path is not None else None
        self.read_only = read_only
        self.events: list[AuditEvent] = []
        self._lock = threading.Lock()
        self._fh = None
        if self.path is not None:
            self._load()
            if not read_only:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = open(self.path, "a", encoding="utf-8")

    def _load(self) -> None:
        if not self.path.exists():
            return
        raw = self.path.read_bytes()
        good_end = 0
        events = []
        for line in raw.splitlines(keepends=True):
            if not line.endswith(b"\n"):
                log.warning("discarding torn audit record at offset %d", good_end)
                break
            try:
                events.append(_parse(line.decode("utf-8")))
            except (ValueError, KeyError, UnicodeDecodeError):
                raise PkiError("audit-corrupt", f"unparseable record at offset {good_end}") from None
            good_end += len(line)
        if good_end != len(raw) and not self.read_only:
            with open(self.path, "r+b") as fh:
                fh.truncate(good_end)
                fh.flush()
                os.fsync(fh.fileno())
        bad = verify_chain(events)
        if bad is not None:
            raise PkiError("audit-corrupt", f"hash chain broken at sequence {bad}")
        self.events = events

    @property
    def last_sequence(self) -> int:
        return self.events[-1].sequence if self.events else 0

    @property
    def head(self) -> str:
        return self.events[-1].payload_hash if self.events else GENESIS

    def append(self, time: int, actor: str, action: str, subject: str, payload: list[dict]) -> AuditEvent:
        if self.read_only:
            raise PkiError("read-only", f"{action} needs write access to the audit log")
        with self._lock:
            body = {
                "sequence": self.last_sequence + 1,
                "time": time,
                "actor": actor,
                "action": action,
                "subject": subject,
                "payload": payload,
            }
            # round-trip so in-memory records equal what a reload would produce
            body = json.loads(canonical_json(body))
            event = AuditEvent(**body, payload_hash=chain_hash(self.head, body))
            if self._fh is not None:
                self._fh.write(event.to_line())
                self._fh.flush()
                os.fsync(self._fh.fileno())
            self.events.append(event)
            return event

    def verify(self) -> int | None:
        return verify_chain(self.events)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def verify_file(path: Path | str) -> int | None:
    events = [_parse(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    return verify_chain(events)
