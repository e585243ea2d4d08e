"""Revocation ledger, CRL/PCL/OCSP products, gateway hotlist and TSA."""

from eidpki.revocation.gateway import (
    BlockMode,
    Gateway,
    GatewayDecision,
    HotlistEntry,
    gateway_check,
)
from eidpki.revocation.ledger import (
    CertStatus,
    RevocationEntry,
    RevocationReason,
    RevocationState,
    classify,
)
from eidpki.revocation.lists import (
    CRL,
    PCL,
    check_status_via_crl,
    check_status_via_pcl,
    generate_crl,
    generate_pcl,
)
from eidpki.revocation.ocsp import (
    OcspRequest,
    OcspResponse,
    accept_response,
    ocsp_respond,
)
from eidpki.revocation.tsa import TimestampAuthority, TimestampToken, verify_timestamp

__all__ = [
    "BlockMode",
    "CRL",
    "CertStatus",
    "Gateway",
    "GatewayDecision",
    "HotlistEntry",
    "OcspRequest",
    "OcspResponse",
    "PCL",
    "RevocationEntry",
    "RevocationReason",
    "RevocationState",
    "TimestampAuthority",
    "TimestampToken",
    "accept_response",
    "check_status_via_crl",
    "check_status_via_pcl",
    "classify",
    "gateway_check",
    "generate_crl",
    "generate_pcl",
    "ocsp_respond",
    "verify_timestamp",
]
