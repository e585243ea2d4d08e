"""Write-ahead journaling shared by every stateful component.

A mutating operation builds an event (a JSON-compatible dict with a
``kind``), hands it to the journal callback and only then applies it.  The
journal is normally the audit log appender; replaying the same events through
``apply`` rebuilds the in-memory state after a restart.
"""

from __future__ import annotations

from collections.abc import Callable
from typing import Any

Event = dict[str, Any]
JournalFn = Callable[[Event], None]


def _discard(event: Event) -> None:
    pass


class Journaled:
    kinds: tuple[str, ...] = ()

    def __init__(self, journal: JournalFn | None = None) -> None:
        self.journal: JournalFn = journal or _discard
        self.observers: list[Callable[[Event], None]] = []

    def _commit(self, event: Event) -> None:
        self.journal(event)
        self.apply(event)
        for observer in self.observers:
            observer(event)

    def handles(self, event: Event) -> bool:
        return event["kind"] in self.kinds

    def apply(self, event: Event) -> None:
        handler = getattr(self, "_on_" + event["kind"].replace(".", "_").replace("-", "_"), None)
        if handler is not None:
            handler(event)
