"""Card validation gateway hotlist.

Temporary blocks lapse lazily: ``check`` compares ``until`` with the query
time, nothing sweeps the list in the background.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from eidpki.errors import PkiError
from eidpki.journal import Journaled, JournalFn


class BlockMode(str, enum.Enum):
    TEMPORARY = "temporary"
    PERMANENT = "permanent"


class GatewayDecision(str, enum.Enum):
    ALLOWED = "allowed"
    BLOCKED_TEMPORARY = "blocked_temporary"
    BLOCKED_PERMANENT = "blocked_permanent"


@dataclass(frozen=True)
class HotlistEntry:
    card_id: str
    block: BlockMode
    since: int
    until: int | None = None

    def __post_init__(self) -> None:
        if self.block is BlockMode.TEMPORARY and (self.until is None or self.until <= self.since):
            raise PkiError("request-malformed", "temporary block needs until > since")
        if self.block is BlockMode.PERMANENT and self.until is not None:
            raise PkiError("request-malformed", "permanent block takes no until")


class Gateway(Journaled):
    kinds = ("gateway.block", "gateway.unblock")

    def __init__(self, journal: JournalFn | None = None) -> None:
        super().__init__(journal)
        self.hotlist: dict[str, HotlistEntry] = {}

    def check(self, card_id: str, at_time: int) -> GatewayDecision:
        return gateway_check(card_id, self.hotlist, at_time)

    def block(self, card_id: str, mode: BlockMode | str, at_time: int, until: int | None = None) -> HotlistEntry:
        entry = HotlistEntry(card_id, BlockMode(mode), at_time, until)
        self._commit(
            {
                "kind": "gateway.block",
                "card_id": card_id,
                "mode": entry.block.value,
                "since": at_time,
                "until": until,
            }
        )
        return entry

    def unblock(self, card_id: str, at_time: int, actor: str = "operator") -> bool:
        """Lift any block.  Unblocking an absent card is acknowledged as a no-op."""
        if card_id not in self.hotlist:
            return False
        self._commit({"kind": "gateway.unblock", "card_id": card_id, "at": at_time, "actor": actor})
        return True

    def _on_gateway_block(self, event) -> None:
        self.hotlist[event["card_id"]] = HotlistEntry(
            event["card_id"], BlockMode(event["mode"]), event["since"], event["until"]
        )

    def _on_gateway_unblock(self, event) -> None:
        self.hotlist.pop(event["card_id"], None)


def gateway_check(card_id: str, hotlist: dict[str, HotlistEntry], at_time: int) -> GatewayDecision:
    entry = hotlist.get(card_id)
    if entry is None:
        return GatewayDecision.ALLOWED
    if entry.block is BlockMode.PERMANENT:
        return GatewayDecision.BLOCKED_PERMANENT
    if entry.since <= at_time < entry.until:
        return GatewayDecision.BLOCKED_TEMPORARY
    return GatewayDecision.ALLOWED
