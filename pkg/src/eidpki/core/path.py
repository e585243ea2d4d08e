"""Certificate path building and validation."""

from __future__ import annotations

import enum
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass
from typing import Protocol

from eidpki.core.certificate import Certificate, Profile
from eidpki.core.schemes import verify
from eidpki.errors import PkiError

MAX_PATH_LENGTH = 8


@dataclass(frozen=True)
class Anchor:
    issuer_id: str
    public_key: bytes
    scheme_id: str

    @classmethod
    def from_certificate(cls, cert: Certificate) -> "Anchor":
        return cls(cert.subject_id, cert.public_key, cert.scheme_id)


class TrustAnchorSet:
    def __init__(self, anchors: Iterable[Anchor] = ()) -> None:
        self._by_id: dict[str, Anchor] = {}
        for anchor in anchors:
            self.add(anchor)

    def add(self, anchor: Anchor) -> None:
        if anchor.issuer_id in self._by_id and self._by_id[anchor.issuer_id] != anchor:
            raise PkiError("id-conflict", f"anchor {anchor.issuer_id} already present")
        self._by_id[anchor.issuer_id] = anchor

    def get(self, issuer_id: str) -> Anchor | None:
        return self._by_id.get(issuer_id)

    def __contains__(self, issuer_id: object) -> bool:
        return issuer_id in self._by_id

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self):
        return iter(self._by_id.values())


@dataclass(frozen=True)
class CertPath:
    chain: tuple[Certificate, ...]

    def __len__(self) -> int:
        return len(self.chain)

    @property
    def leaf(self) -> Certificate:
        return self.chain[0]


class Verdict(str, enum.Enum):
    VALID = "valid"
    EXPIRED = "expired"
    NOT_YET_VALID = "not_yet_valid"
    REVOKED = "revoked"
    UNKNOWN = "unknown"
    BAD_SIGNATURE = "bad_signature"
    NO_PATH = "no_path"


class RevocationSource(str, enum.Enum):
    CRL = "crl"
    PCL = "pcl"
    OCSP = "ocsp"
    NONE = "none"


@dataclass(frozen=True)
class ValidationOutcome:
    verdict: Verdict
    checked_at: int
    revocation_source: RevocationSource
    detail: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "verdict", Verdict(self.verdict))
        object.__setattr__(self, "revocation_source", RevocationSource(self.revocation_source))
        if self.verdict is Verdict.VALID and self.revocation_source is RevocationSource.NONE:
            raise ValueError("a valid outcome needs a revocation source")

    @property
    def valid(self) -> bool:
        return self.verdict is Verdict.VALID

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "checked_at": self.checked_at,
            "revocation_source": self.revocation_source.value,
            "detail": self.detail,
        }


class RevocationOracle(Protocol):
    """Answers ``good``, ``revoked`` or another status for one certificate."""

    source: RevocationSource

    def status(self, cert: Certificate, at_time: int) -> str: ...


Repository = Callable[[str], "Certificate | None"] | Mapping[str, Certificate]


def _lookup(repository: Repository, subject_id: str) -> Certificate | None:
    if callable(repository):
        return repository(subject_id)
    return repository.get(subject_id)


def build_certificate_path(
    leaf: Certificate, repository: Repository, anchors: TrustAnchorSet
) -> CertPath:
    """Follow issuer links from ``leaf`` until a trust anchor is reached.

    The repository resolves each issuer to at most one CA certificate, so the
    chain found is the only (hence shortest) one.  Raises ``no-path``.
    """
    if not len(anchors):
        raise PkiError("no-path", "empty trust anchor set")
    chain = [leaf]
    seen = {leaf.subject_id}
    current = leaf
    while True:
        if current.is_self_signed:
            if current.issuer_id in anchors:
                return CertPath(tuple(chain))
            raise PkiError("no-path", f"self-signed {current.subject_id} is not an anchor")
        issuer = _lookup(repository, current.issuer_id)
        if issuer is None:
            if current.issuer_id in anchors:
                return CertPath(tuple(chain))
            raise PkiError("no-path", f"issuer {current.issuer_id} not found")
        if issuer.subject_id in seen:
            raise PkiError("no-path", "cycle")
        if len(chain) >= MAX_PATH_LENGTH:
            raise PkiError("no-path", "path too long")
        seen.add(issuer.subject_id)
        chain.append(issuer)
        current = issuer


def _signature_failure(path: CertPath, anchors: TrustAnchorSet) -> str | None:
    chain = path.chain
    for i, cert in enumerate(chain):
        if i + 1 < len(chain):
            issuer = chain[i + 1]
            if issuer.profile is not Profile.CA:
                return f"{issuer.subject_id} is not a CA certificate"
            key = (issuer.scheme_id, issuer.public_key)
        else:
            anchor = anchors.get(cert.issuer_id)
            if anchor is None:
                return f"{cert.issuer_id} is not a trust anchor"
            key = (anchor.scheme_id, anchor.public_key)
        if not verify(key[0], key[1], cert.tbs_bytes, cert.signature):
            return f"signature of {cert.subject_id}#{cert.serial} does not verify"
    return None


def check_signatures_and_validity(
    path: CertPath, anchors: TrustAnchorSet, at_time: int
) -> tuple[Verdict, str] | None:
    """Offline part of validation: signatures first, then validity windows."""
    failure = _signature_failure(path, anchors)
    if failure is not None:
        return Verdict.BAD_SIGNATURE, failure
    for cert in path.chain:
        if at_time < cert.not_before:
            return Verdict.NOT_YET_VALID, f"{cert.subject_id}#{cert.serial}"
        if at_time > cert.not_after:
            return Verdict.EXPIRED, f"{cert.subject_id}#{cert.serial}"
    return None


def validate_certificate_path(
    path: CertPath,
    anchors: TrustAnchorSet,
    revocation: RevocationOracle,
    at_time: int,
) -> ValidationOutcome:
    """Validate signatures, then validity windows, then revocation status.

    Each stage walks the chain leaf to anchor; the first stage with a failure
    fixes the verdict.  The self-signed anchor certificate is trusted
    out-of-band and not submitted to the revocation oracle.
    """
    if not path.chain:
        raise PkiError("request-malformed", "empty path")
    source = RevocationSource(revocation.source)

    def outcome(verdict: Verdict, detail: str = "") -> ValidationOutcome:
        return ValidationOutcome(verdict, at_time, source, detail)

    failure = check_signatures_and_validity(path, anchors, at_time)
    if failure is not None:
        return outcome(*failure)

    for cert in path.chain:
        if cert.is_self_signed and cert.issuer_id in anchors:
            continue
        status = revocation.status(cert, at_time)
        if status == "revoked":
            return outcome(Verdict.REVOKED, f"{cert.subject_id}#{cert.serial}")
        if status != "good":
            return outcome(Verdict.UNKNOWN, f"{cert.subject_id}#{cert.serial}: {status}")

    return outcome(Verdict.VALID)
