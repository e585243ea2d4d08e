"""Enrollment applications and the civil / forensic / blacklist registry."""

from __future__ import annotations

import enum
import json
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path

from eidpki.card.template import FingerprintTemplate
from eidpki.errors import PkiError

REQUIRED_BIOGRAPHIC = ("name", "birth_date", "nationality")


class ApplicationStatus(str, enum.Enum):
    CAPTURED = "captured"
    VERIFIED = "verified"
    REJECTED = "rejected"
    ISSUED = "issued"


_TRANSITIONS = {
    ApplicationStatus.CAPTURED: {ApplicationStatus.VERIFIED, ApplicationStatus.REJECTED},
    ApplicationStatus.VERIFIED: {ApplicationStatus.ISSUED, ApplicationStatus.REJECTED},
    ApplicationStatus.REJECTED: set(),
    ApplicationStatus.ISSUED: set(),
}


@dataclass(frozen=True)
class EnrollmentApplication:
    applicant_id: str
    biographic: Mapping[str, str]
    portrait_hash: bytes
    fingerprints: tuple[FingerprintTemplate, ...]
    status: ApplicationStatus = ApplicationStatus.CAPTURED
    reason: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "status", ApplicationStatus(self.status))
        object.__setattr__(self, "fingerprints", tuple(self.fingerprints))
        missing = [k for k in REQUIRED_BIOGRAPHIC if not self.biographic.get(k)]
        if missing:
            raise PkiError("request-malformed", f"biographic field(s) missing: {', '.join(missing)}")
        if len(self.portrait_hash) != 32:
            raise PkiError("request-malformed", "portrait hash must be 32 bytes")
        if not 1 <= len(self.fingerprints) <= 10:
            raise PkiError("request-malformed", "between 1 and 10 fingerprints required")

    def advance(self, status: ApplicationStatus, reason: str = "") -> "EnrollmentApplication":
        status = ApplicationStatus(status)
        if status not in _TRANSITIONS[self.status]:
            raise PkiError("invalid-transition", f"{self.status.value} -> {status.value}")
        return replace(self, status=status, reason=reason)

    def as_dict(self) -> dict:
        return {
            "applicant_id": self.applicant_id,
            "biographic": dict(self.biographic),
            "portrait_hash": self.portrait_hash.hex(),
            "fingerprints": [t.as_dict() for t in self.fingerprints],
            "status": self.status.value,
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EnrollmentApplication":
        return cls(
            d["applicant_id"],
            dict(d["biographic"]),
            bytes.fromhex(d["portrait_hash"]),
            tuple(FingerprintTemplate.from_dict(t) for t in d["fingerprints"]),
            ApplicationStatus(d.get("status", "captured")),
            d.get("reason", ""),
        )


@dataclass(frozen=True)
class RegistryRecord:
    applicant_id: str
    civil_match: bool = True
    forensic_match: bool = False
    blacklist_hit: bool = False

    @property
    def clears(self) -> bool:
        return not (self.blacklist_hit or self.forensic_match)

    def rejection_reason(self) -> str:
        reasons = []
        if self.blacklist_hit:
            reasons.append("blacklist-hit")
        if self.forensic_match:
            reasons.append("forensic-match")
        return ",".join(reasons)


@dataclass
class Registry:
    """In-artifact stand-in for the civil, forensic and blacklist databases."""

    records: dict[str, RegistryRecord] = field(default_factory=dict)

    def lookup(self, applicant_id: str) -> RegistryRecord:
        return self.records.get(applicant_id, RegistryRecord(applicant_id))

    @classmethod
    def from_fixture(cls, path: Path | str) -> "Registry":
        path = Path(path)
        if not path.exists():
            return cls()
        data = json.loads(path.read_text())
        return cls(
            {
                aid: RegistryRecord(
                    aid,
                    bool(flags.get("civil_match", True)),
                    bool(flags.get("forensic_match", False)),
                    bool(flags.get("blacklist_hit", False)),
                )
                for aid, flags in data.items()
            }
        )
