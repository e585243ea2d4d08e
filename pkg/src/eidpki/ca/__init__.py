"""Certification authority hierarchy, policies, key containers and escrow."""

from eidpki.ca.hierarchy import (
    CA_KEY_BITS,
    USER_KEY_BITS,
    CAKind,
    CAStatus,
    CertificationAuthority,
    EscrowRecord,
    ExternalSubCA,
    Hierarchy,
    Issuance,
    RevocationAck,
)
from eidpki.ca.keystore import KeyContainer, KeyStore
from eidpki.ca.policy import CertificatePolicy, default_policies

__all__ = [
    "CA_KEY_BITS",
    "USER_KEY_BITS",
    "CAKind",
    "CAStatus",
    "CertificatePolicy",
    "CertificationAuthority",
    "EscrowRecord",
    "ExternalSubCA",
    "Hierarchy",
    "Issuance",
    "KeyContainer",
    "KeyStore",
    "RevocationAck",
    "default_policies",
]
