"""Signed revocation products: CRL and Positive Certification List."""

from __future__ import annotations

import bisect
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from functools import cached_property

from eidpki.core import encoding as enc
from eidpki.core.certificate import Certificate
from eidpki.core.schemes import KeyPair, sign, verify
from eidpki.errors import PkiError
from eidpki.revocation.ledger import (
    CertStatus,
    RevocationEntry,
    RevocationReason,
    RevocationState,
    classify,
)

CRL_ARMOR = "EIDPKI CRL"
PCL_ARMOR = "EIDPKI PCL"


def _entry_bytes(entry: RevocationEntry) -> bytes:
    return enc.encode_fields(
        {
            "reason": enc.text(entry.reason.value),
            "revoked_at": enc.u64(entry.revoked_at),
            "serial": enc.u64(entry.serial),
        }
    )


def _entry_from(raw: bytes) -> RevocationEntry:
    f = enc.decode_fields(raw)
    enc.require(f, "reason", "revoked_at", "serial")
    return RevocationEntry(
        enc.from_u64(f["serial"]),
        RevocationReason(enc.from_text(f["reason"])),
        enc.from_u64(f["revoked_at"]),
    )


def _verify_once(product, public_key: bytes) -> bool:
    # products are frozen, so one check per signer key holds for the object's lifetime
    seen = product.__dict__.setdefault("_verified", {})
    if public_key not in seen:
        seen[public_key] = verify(product.scheme_id, public_key, product.body_bytes(), product.signature)
    return seen[public_key]


def _split_signed(data: bytes) -> tuple[dict[str, bytes], bytes, bytes]:
    chunks = enc.decode_list(data)
    if len(chunks) % 2 != 1:
        raise PkiError("encoding-error", "signed record must end with a signature")
    body = enc.encode_list(chunks[:-1])
    return enc.decode_fields(body), body, chunks[-1]


@dataclass(frozen=True)
class CRL:
    ca_id: str
    signer_id: str
    this_update: int
    next_update: int
    entries: tuple[RevocationEntry, ...]
    version: int
    scheme_id: str
    signature: bytes = field(default=b"", repr=False)

    def body_bytes(self) -> bytes:
        return self._body

    @cached_property
    def _body(self) -> bytes:
        return enc.encode_fields(
            {
                "ca_id": enc.text(self.ca_id),
                "entries": enc.encode_list(_entry_bytes(e) for e in self.entries),
                "next_update": enc.u64(self.next_update),
                "scheme_id": enc.text(self.scheme_id),
                "signer_id": enc.text(self.signer_id),
                "this_update": enc.u64(self.this_update),
                "version": enc.u64(self.version),
            }
        )

    def to_bytes(self) -> bytes:
        return self.body_bytes() + enc.encode_list([self.signature])

    @classmethod
    def from_bytes(cls, data: bytes) -> "CRL":
        f, body, signature = _split_signed(data)
        enc.require(f, "ca_id", "entries", "next_update", "scheme_id", "signer_id", "this_update", "version")
        crl = cls(
            ca_id=enc.from_text(f["ca_id"]),
            signer_id=enc.from_text(f["signer_id"]),
            this_update=enc.from_u64(f["this_update"]),
            next_update=enc.from_u64(f["next_update"]),
            entries=tuple(_entry_from(e) for e in enc.decode_list(f["entries"])),
            version=enc.from_u64(f["version"]),
            scheme_id=enc.from_text(f["scheme_id"]),
            signature=signature,
        )
        if crl.body_bytes() != body:
            raise PkiError("encoding-error", "non-canonical CRL")
        return crl

    def armored(self) -> str:
        return enc.armor(CRL_ARMOR, self.to_bytes())

    @classmethod
    def from_armored(cls, text: str) -> "CRL":
        return cls.from_bytes(enc.dearmor(CRL_ARMOR, text))

    @property
    def serials(self) -> list[int]:
        return [e.serial for e in self.entries]

    def entry(self, serial: int) -> RevocationEntry | None:
        return self._by_serial.get(serial)

    @cached_property
    def _by_serial(self) -> dict[int, RevocationEntry]:
        return {e.serial: e for e in self.entries}

    def verify_signature(self, public_key: bytes) -> bool:
        return _verify_once(self, public_key)


def generate_crl(
    state: RevocationState,
    issued: Mapping[int, Certificate],
    ca_key: KeyPair,
    at_time: int,
    validity_window_seconds: int,
    signer_id: str | None = None,
) -> CRL:
    """CRL of every serial whose status at ``at_time`` is revoked.

    Revoked serials that have expired or are not yet valid are left out so the
    CRL, the PCL and the expired and not-yet-valid sets partition the issued
    serials.  Consumers refuse to vouch for a certificate that became valid
    after the CRL was produced, see ``check_status_via_crl``.
    """
    if validity_window_seconds <= 0:
        raise PkiError("request-malformed", "CRL validity window must be positive")
    entries = tuple(
        state.entries[s]
        for s in sorted(state.entries)
        if s in issued and issued[s].not_before <= at_time <= issued[s].not_after
    )
    unsigned = CRL(
        ca_id=state.ca_id,
        signer_id=signer_id or state.ca_id,
        this_update=at_time,
        next_update=at_time + validity_window_seconds,
        entries=entries,
        version=state.version,
        scheme_id=ca_key.scheme_id,
    )
    return _with_signature(unsigned, sign(ca_key, unsigned.body_bytes()))


def _with_signature(record, signature: bytes):
    return replace(record, signature=signature)


def check_status_via_crl(
    serial: int,
    crl: CRL,
    issued_cert: Certificate | None,
    at_time: int,
    signer_public_key: bytes,
) -> CertStatus:
    """Status of ``serial`` from a CRL the caller fetched.

    Verifies the CRL signature and freshness first.  ``issued_cert`` is the
    certificate the relying party holds for that serial, or None.
    """
    if not crl.verify_signature(signer_public_key):
        raise PkiError("crl-invalid", f"CRL for {crl.ca_id} fails signature verification")
    if at_time > crl.next_update:
        raise PkiError("crl-stale", f"CRL for {crl.ca_id} expired at {crl.next_update}")
    if issued_cert is not None and (issued_cert.serial != serial or issued_cert.issuer_id != crl.ca_id):
        raise PkiError("request-malformed", "certificate does not match serial/issuer")
    status = classify(issued_cert, crl.entry(serial) is not None, at_time)
    if status is CertStatus.GOOD and issued_cert.not_before > crl.this_update:
        # the CRL predates the certificate's validity and cannot speak for it
        raise PkiError("crl-stale", f"CRL for {crl.ca_id} predates certificate {serial}")
    return status


def _to_ranges(serials: Iterable[int]) -> list[tuple[int, int]]:
    ranges: list[tuple[int, int]] = []
    for s in serials:
        if ranges and ranges[-1][1] + 1 == s:
            ranges[-1] = (ranges[-1][0], s)
        else:
            ranges.append((s, s))
    return ranges


@dataclass(frozen=True)
class PCL:
    ca_id: str
    signer_id: str
    as_of: int
    valid_serials: tuple[int, ...]
    version: int
    scheme_id: str
    signature: bytes = field(default=b"", repr=False)

    def ranges(self) -> list[tuple[int, int]]:
        return _to_ranges(self.valid_serials)

    def body_bytes(self) -> bytes:
        return self._body

    @cached_property
    def _body(self) -> bytes:
        ranges = enc.encode_list(enc.u64(a) + enc.u64(b) for a, b in self.ranges())
        return enc.encode_fields(
            {
                "as_of": enc.u64(self.as_of),
                "ca_id": enc.text(self.ca_id),
                "ranges": ranges,
                "scheme_id": enc.text(self.scheme_id),
                "signer_id": enc.text(self.signer_id),
                "version": enc.u64(self.version),
            }
        )

    def to_bytes(self) -> bytes:
        return self.body_bytes() + enc.encode_list([self.signature])

    @classmethod
    def from_bytes(cls, data: bytes) -> "PCL":
        f, body, signature = _split_signed(data)
        enc.require(f, "as_of", "ca_id", "ranges", "scheme_id", "signer_id", "version")
        serials: list[int] = []
        for raw in enc.decode_list(f["ranges"]):
            if len(raw) != 16:
                raise PkiError("encoding-error", "bad PCL range")
            lo, hi = enc.from_u64(raw[:8]), enc.from_u64(raw[8:])
            if hi < lo or (serials and lo <= serials[-1]):
                raise PkiError("encoding-error", "PCL ranges out of order")
            serials.extend(range(lo, hi + 1))
        pcl = cls(
            ca_id=enc.from_text(f["ca_id"]),
            signer_id=enc.from_text(f["signer_id"]),
            as_of=enc.from_u64(f["as_of"]),
            valid_serials=tuple(serials),
            version=enc.from_u64(f["version"]),
            scheme_id=enc.from_text(f["scheme_id"]),
            signature=signature,
        )
        if pcl.body_bytes() != body:
            raise PkiError("encoding-error", "non-canonical PCL")
        return pcl

    def armored(self) -> str:
        return enc.armor(PCL_ARMOR, self.to_bytes())

    @classmethod
    def from_armored(cls, text: str) -> "PCL":
        return cls.from_bytes(enc.dearmor(PCL_ARMOR, text))

    def __contains__(self, serial: object) -> bool:
        i = bisect.bisect_left(self.valid_serials, serial)
        return i < len(self.valid_serials) and self.valid_serials[i] == serial

    def verify_signature(self, public_key: bytes) -> bool:
        return _verify_once(self, public_key)


def generate_pcl(
    state: RevocationState,
    issued: Mapping[int, Certificate],
    ca_key: KeyPair,
    at_time: int,
    signer_id: str | None = None,
) -> PCL:
    valid = tuple(
        s
        for s in sorted(issued)
        if classify(issued[s], state.is_revoked(s), at_time) is CertStatus.GOOD
    )
    unsigned = PCL(
        ca_id=state.ca_id,
        signer_id=signer_id or state.ca_id,
        as_of=at_time,
        valid_serials=valid,
        version=state.version,
        scheme_id=ca_key.scheme_id,
    )
    return _with_signature(unsigned, sign(ca_key, unsigned.body_bytes()))


def check_status_via_pcl(
    serial: int,
    pcl: PCL,
    issued_cert: Certificate | None,
    at_time: int,
    signer_public_key: bytes,
) -> CertStatus:
    """Status from a positive list: anything current but unlisted is revoked."""
    if not pcl.verify_signature(signer_public_key):
        raise PkiError("pcl-invalid", f"PCL for {pcl.ca_id} fails signature verification")
    if issued_cert is not None and (issued_cert.serial != serial or issued_cert.issuer_id != pcl.ca_id):
        raise PkiError("request-malformed", "certificate does not match serial/issuer")
    status = classify(issued_cert, False, at_time)
    if status is CertStatus.GOOD and serial not in pcl:
        return CertStatus.REVOKED
    return status
