"""OCSP-style online status protocol.

Requests carry a mandatory 16-byte nonce which the signed response echoes.
A response is signed by the CA that issued the serial, or by that CA's
parent when the CA's keys live outside this infrastructure.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field, replace

from eidpki.core import encoding as enc
from eidpki.core.certificate import Certificate
from eidpki.core.rng import Rng, system_rng
from eidpki.core.schemes import KeyPair, sign, verify
from eidpki.errors import PkiError
from eidpki.revocation.ledger import CertStatus, RevocationState, classify

NONCE_BYTES = 16


@dataclass(frozen=True)
class OcspRequest:
    ca_id: str
    serial: int
    nonce: bytes

    @classmethod
    def new(cls, ca_id: str, serial: int, rng: Rng = system_rng) -> "OcspRequest":
        return cls(ca_id, serial, rng.bytes(NONCE_BYTES))

    def well_formed(self) -> bool:
        return (
            isinstance(self.ca_id, str)
            and bool(self.ca_id)
            and isinstance(self.serial, int)
            and 0 < self.serial < 2**64
            and isinstance(self.nonce, bytes)
            and len(self.nonce) == NONCE_BYTES
        )

    def as_dict(self) -> dict:
        return {"ca_id": self.ca_id, "serial": self.serial, "nonce": self.nonce.hex()}


@dataclass(frozen=True)
class OcspResponse:
    ca_id: str
    serial: int
    status: CertStatus | None
    revoked_at: int | None
    produced_at: int
    nonce: bytes
    responder_id: str
    version: int
    scheme_id: str
    error: str | None = None
    signature: bytes = field(default=b"", repr=False)

    def body_bytes(self) -> bytes:
        fields = {
            "ca_id": enc.text(self.ca_id),
            "nonce": self.nonce,
            "produced_at": enc.u64(self.produced_at),
            "responder_id": enc.text(self.responder_id),
            "scheme_id": enc.text(self.scheme_id),
            "serial": enc.u64(self.serial),
            "version": enc.u64(self.version),
        }
        if self.status is not None:
            fields["status"] = enc.text(self.status.value)
        if self.revoked_at is not None:
            fields["revoked_at"] = enc.u64(self.revoked_at)
        if self.error is not None:
            fields["error"] = enc.text(self.error)
        return enc.encode_fields(fields)

    def as_dict(self) -> dict:
        return {
            "ca_id": self.ca_id,
            "serial": self.serial,
            "status": self.status.value if self.status else None,
            "revoked_at": self.revoked_at,
            "produced_at": self.produced_at,
            "nonce": self.nonce.hex(),
            "responder_id": self.responder_id,
            "version": self.version,
            "scheme_id": self.scheme_id,
            "error": self.error,
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "OcspResponse":
        return cls(
            ca_id=d["ca_id"],
            serial=int(d["serial"]),
            status=CertStatus(d["status"]) if d.get("status") else None,
            revoked_at=d.get("revoked_at"),
            produced_at=int(d["produced_at"]),
            nonce=bytes.fromhex(d["nonce"]),
            responder_id=d["responder_id"],
            version=int(d["version"]),
            scheme_id=d["scheme_id"],
            error=d.get("error"),
            signature=bytes.fromhex(d["signature"]),
        )


def ocsp_respond(
    request: OcspRequest,
    state: RevocationState,
    issued: Mapping[int, Certificate],
    responder_key: KeyPair,
    at_time: int,
    responder_id: str | None = None,
) -> OcspResponse:
    responder_id = responder_id or state.ca_id
    if not request.well_formed() or request.ca_id != state.ca_id:
        nonce = request.nonce if isinstance(request.nonce, bytes) else b""
        serial = request.serial if isinstance(request.serial, int) and 0 <= request.serial < 2**64 else 0
        unsigned = OcspResponse(
            ca_id=str(request.ca_id),
            serial=serial,
            status=None,
            revoked_at=None,
            produced_at=at_time,
            nonce=nonce,
            responder_id=responder_id,
            version=state.version,
            scheme_id=responder_key.scheme_id,
            error="malformed",
        )
    else:
        cert = issued.get(request.serial)
        entry = state.entries.get(request.serial)
        status = classify(cert, entry is not None, at_time)
        unsigned = OcspResponse(
            ca_id=request.ca_id,
            serial=request.serial,
            status=status,
            revoked_at=entry.revoked_at if status is CertStatus.REVOKED else None,
            produced_at=at_time,
            nonce=request.nonce,
            responder_id=responder_id,
            version=state.version,
            scheme_id=responder_key.scheme_id,
        )
    return replace(unsigned, signature=sign(responder_key, unsigned.body_bytes()))


def accept_response(
    request: OcspRequest,
    response: OcspResponse,
    responder_public_key: bytes,
    allowed_responders: set[str] | None = None,
) -> CertStatus:
    """Client-side checks: signature, nonce binding, request echo."""
    if allowed_responders is not None and response.responder_id not in allowed_responders:
        raise PkiError("ocsp-invalid", f"responder {response.responder_id} not authorized")
    if not verify(response.scheme_id, responder_public_key, response.body_bytes(), response.signature):
        raise PkiError("ocsp-invalid", "response signature does not verify")
    if response.nonce != request.nonce:
        raise PkiError("ocsp-invalid", "nonce mismatch")
    if response.error is not None:
        raise PkiError("ocsp-error", response.error)
    if response.ca_id != request.ca_id or response.serial != request.serial:
        raise PkiError("ocsp-invalid", "response does not answer the request")
    assert response.status is not None
    return response.status
