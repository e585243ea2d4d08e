"""Relying-party toolkit over the card emulator and validation services."""

from eidpki.toolkit.oracles import CrlOracle, OcspOracle, PclOracle
from eidpki.toolkit.toolkit import (
    AuthResult,
    Factor,
    IdentityRecord,
    SignedDocument,
    Toolkit,
    ValidationMode,
    VerifyMode,
    document_digest,
    verify_signed_hash,
)

__all__ = [
    "AuthResult",
    "CrlOracle",
    "Factor",
    "IdentityRecord",
    "OcspOracle",
    "PclOracle",
    "SignedDocument",
    "Toolkit",
    "ValidationMode",
    "VerifyMode",
    "document_digest",
    "verify_signed_hash",
]
