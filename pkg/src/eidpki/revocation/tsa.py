"""Trusted time-stamping.

Tokens bind a 32-byte document hash to a time and a strictly increasing
serial, signed by a device-profile certificate issued under the root.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field, replace

from eidpki.core import encoding as enc
from eidpki.core.certificate import Certificate
from eidpki.core.schemes import KeyPair, sign, verify
from eidpki.errors import PkiError
from eidpki.journal import Journaled, JournalFn


@dataclass(frozen=True)
class TimestampToken:
    document_hash: bytes
    time: int
    serial: int
    tsa_id: str
    scheme_id: str
    signature: bytes = field(default=b"", repr=False)

    def body_bytes(self) -> bytes:
        return enc.encode_fields(
            {
                "document_hash": self.document_hash,
                "scheme_id": enc.text(self.scheme_id),
                "serial": enc.u64(self.serial),
                "time": enc.u64(self.time),
                "tsa_id": enc.text(self.tsa_id),
            }
        )

    def as_dict(self) -> dict:
        return {
            "document_hash": self.document_hash.hex(),
            "time": self.time,
            "serial": self.serial,
            "tsa_id": self.tsa_id,
            "scheme_id": self.scheme_id,
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_dict(cls, d) -> "TimestampToken":
        return cls(
            bytes.fromhex(d["document_hash"]),
            int(d["time"]),
            int(d["serial"]),
            d["tsa_id"],
            d["scheme_id"],
            bytes.fromhex(d["signature"]),
        )


def verify_timestamp(token: TimestampToken, tsa_cert: Certificate) -> bool:
    if token.tsa_id != tsa_cert.subject_id or token.scheme_id != tsa_cert.scheme_id:
        return False
    if not tsa_cert.valid_at(token.time):
        return False
    return verify(tsa_cert.scheme_id, tsa_cert.public_key, token.body_bytes(), token.signature)


class TimestampAuthority(Journaled):
    kinds = ("tsa.stamped",)

    def __init__(
        self,
        key: KeyPair,
        cert: Certificate,
        clock: Callable[[], int],
        journal: JournalFn | None = None,
    ) -> None:
        super().__init__(journal)
        self.key = key
        self.cert = cert
        self.clock = clock
        self.last_serial = 0
        self.last_time = 0

    def issue_timestamp(self, document_hash: bytes) -> TimestampToken:
        if not isinstance(document_hash, bytes) or len(document_hash) != 32:
            raise PkiError("request-malformed", "document hash must be 32 bytes")
        # never step backwards even if the wall clock does
        t = max(self.clock(), self.last_time)
        unsigned = TimestampToken(document_hash, t, self.last_serial + 1, self.cert.subject_id, self.key.scheme_id)
        token = replace(unsigned, signature=sign(self.key, unsigned.body_bytes()))
        self._commit({"kind": "tsa.stamped", "serial": token.serial, "time": t, "document_hash": document_hash.hex()})
        return token

    def _on_tsa_stamped(self, event) -> None:
        self.last_serial = max(self.last_serial, event["serial"])
        self.last_time = max(self.last_time, event["time"])
