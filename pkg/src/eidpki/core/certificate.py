"""Certificate record, canonical TBS encoding and issuance signing."""

from __future__ import annotations

import enum
from collections.abc import Mapping
from dataclasses import dataclass, field
from dataclasses import fields as dc_fields
from functools import cached_property
from typing import Any

from eidpki.core import encoding as enc
from eidpki.core.schemes import KeyPair, get_scheme, verify
from eidpki.errors import PkiError

ARMOR_LABEL = "EIDPKI CERTIFICATE"


class Profile(str, enum.Enum):
    CA = "ca"
    IDENTITY_AUTH = "identity_auth"
    SIGNATURE = "signature"
    ENCRYPTION = "encryption"
    ATTRIBUTE = "attribute"
    DEVICE = "device"


MANDATORY_FIELDS = (
    "serial",
    "subject_id",
    "issuer_id",
    "profile",
    "public_key",
    "scheme_id",
    "key_length_bits",
    "not_before",
    "not_after",
    "policy_id",
)


def canonical_tbs_encode(cert_fields: Mapping[str, Any]) -> bytes:
    """Encode everything a CA signs.  ``role_attributes`` may be absent."""
    missing = [name for name in MANDATORY_FIELDS if cert_fields.get(name) is None]
    if missing:
        raise PkiError("encoding-error", f"missing field(s): {', '.join(missing)}")
    profile = cert_fields["profile"]
    out = {
        "serial": enc.u64(cert_fields["serial"]),
        "subject_id": enc.text(cert_fields["subject_id"]),
        "issuer_id": enc.text(cert_fields["issuer_id"]),
        "profile": enc.text(Profile(profile).value),
        "public_key": bytes(cert_fields["public_key"]),
        "scheme_id": enc.text(cert_fields["scheme_id"]),
        "key_length_bits": enc.u64(cert_fields["key_length_bits"]),
        "not_before": enc.u64(cert_fields["not_before"]),
        "not_after": enc.u64(cert_fields["not_after"]),
        "policy_id": enc.text(cert_fields["policy_id"]),
    }
    roles = cert_fields.get("role_attributes")
    if roles is not None:
        out["role_attributes"] = enc.encode_str_map(roles)
    return enc.encode_fields(out)


@dataclass(frozen=True)
class Certificate:
    serial: int
    subject_id: str
    issuer_id: str
    profile: Profile
    public_key: bytes
    scheme_id: str
    key_length_bits: int
    not_before: int
    not_after: int
    policy_id: str
    role_attributes: Mapping[str, str] | None = None
    signature: bytes = field(default=b"", repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "profile", Profile(self.profile))
        if self.role_attributes is not None:
            object.__setattr__(self, "role_attributes", dict(sorted(self.role_attributes.items())))
        check_fields(self.tbs_fields())

    def tbs_fields(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in dc_fields(self) if f.name != "signature"}

    @cached_property
    def tbs_bytes(self) -> bytes:
        return canonical_tbs_encode(self.tbs_fields())

    @property
    def is_self_signed(self) -> bool:
        return self.subject_id == self.issuer_id

    def valid_at(self, t: int) -> bool:
        return self.not_before <= t <= self.not_after

    def verify_with(self, scheme_id: str, public_key: bytes) -> bool:
        return verify(scheme_id, public_key, self.tbs_bytes, self.signature)

    def to_bytes(self) -> bytes:
        return self.tbs_bytes + enc.encode_list([self.signature])

    @classmethod
    def from_bytes(cls, data: bytes) -> "Certificate":
        chunks = enc.decode_list(data)
        if len(chunks) % 2 != 1:
            raise PkiError("encoding-error", "certificate must end with a signature frame")
        tbs = enc.encode_list(chunks[:-1])
        raw = enc.decode_fields(tbs)
        enc.require(raw, *MANDATORY_FIELDS)
        roles = enc.decode_str_map(raw["role_attributes"]) if "role_attributes" in raw else None
        cert = cls(
            serial=enc.from_u64(raw["serial"]),
            subject_id=enc.from_text(raw["subject_id"]),
            issuer_id=enc.from_text(raw["issuer_id"]),
            profile=Profile(enc.from_text(raw["profile"])),
            public_key=raw["public_key"],
            scheme_id=enc.from_text(raw["scheme_id"]),
            key_length_bits=enc.from_u64(raw["key_length_bits"]),
            not_before=enc.from_u64(raw["not_before"]),
            not_after=enc.from_u64(raw["not_after"]),
            policy_id=enc.from_text(raw["policy_id"]),
            role_attributes=roles,
            signature=chunks[-1],
        )
        if cert.tbs_bytes != tbs:
            raise PkiError("encoding-error", "non-canonical certificate encoding")
        return cert

    def armored(self) -> str:
        return enc.armor(ARMOR_LABEL, self.to_bytes())

    @classmethod
    def from_armored(cls, text: str) -> "Certificate":
        return cls.from_bytes(enc.dearmor(ARMOR_LABEL, text))


def check_fields(f: Mapping[str, Any]) -> None:
    if f["serial"] == 0:
        raise PkiError("request-malformed", "serial must be non-zero")
    if f["not_before"] >= f["not_after"]:
        raise PkiError("invalid-validity", "not_before must precede not_after")
    has_roles = f.get("role_attributes") is not None
    if has_roles != (Profile(f["profile"]) is Profile.ATTRIBUTE):
        raise PkiError("request-malformed", "role_attributes present iff profile is attribute")


def sign_certificate(issuer_key: KeyPair, **cert_fields: Any) -> Certificate:
    """Sign ``cert_fields`` (every Certificate field except the signature)."""
    if cert_fields.get("not_before") is not None and cert_fields.get("not_after") is not None:
        if cert_fields["not_before"] >= cert_fields["not_after"]:
            raise PkiError("invalid-validity", "not_before must precede not_after")
    tbs = canonical_tbs_encode(cert_fields)
    signature = get_scheme(issuer_key.scheme_id).sign(issuer_key.private_key, tbs)
    cert = Certificate(**cert_fields, signature=signature)
    assert cert.tbs_bytes == tbs
    return cert
