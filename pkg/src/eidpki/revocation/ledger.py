"""Per-CA revocation ledger and the shared status classification."""

from __future__ import annotations

import enum
from collections.abc import Mapping
from dataclasses import dataclass, field
from types import MappingProxyType

from eidpki.core.certificate import Certificate


class RevocationReason(str, enum.Enum):
    KEY_COMPROMISE = "key_compromise"
    CARD_LOST = "card_lost"
    SUPERSEDED = "superseded"
    CESSATION = "cessation"
    ADMINISTRATIVE = "administrative"


class CertStatus(str, enum.Enum):
    """Status answered by every revocation product.

    ``expired`` and ``not_yet_valid`` cover issued certificates outside their
    validity window; ``unknown`` is reserved for serials never issued.
    """

    GOOD = "good"
    REVOKED = "revoked"
    EXPIRED = "expired"
    NOT_YET_VALID = "not_yet_valid"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class RevocationEntry:
    serial: int
    reason: RevocationReason
    revoked_at: int


@dataclass
class RevocationState:
    ca_id: str
    entries: dict[int, RevocationEntry] = field(default_factory=dict)
    version: int = 0

    def add(self, serial: int, reason: RevocationReason, revoked_at: int) -> bool:
        """Record a revocation; repeats keep the first entry and return False."""
        if serial in self.entries:
            return False
        self.entries[serial] = RevocationEntry(serial, RevocationReason(reason), revoked_at)
        self.version += 1
        return True

    def is_revoked(self, serial: int) -> bool:
        return serial in self.entries

    def snapshot(self) -> "LedgerSnapshot":
        return LedgerSnapshot(self.ca_id, MappingProxyType(dict(self.entries)), self.version)


@dataclass(frozen=True)
class LedgerSnapshot:
    ca_id: str
    entries: Mapping[int, RevocationEntry]
    version: int

    def is_revoked(self, serial: int) -> bool:
        return serial in self.entries


def classify(cert: Certificate | None, revoked: bool, at_time: int) -> CertStatus:
    """Single source of truth for status precedence.

    Never issued, then expired, then not yet valid, then revoked, then good.
    The validity window is inclusive at both ends.
    """
    if cert is None:
        return CertStatus.UNKNOWN
    if at_time > cert.not_after:
        return CertStatus.EXPIRED
    if at_time < cert.not_before:
        return CertStatus.NOT_YET_VALID
    if revoked:
        return CertStatus.REVOKED
    return CertStatus.GOOD
