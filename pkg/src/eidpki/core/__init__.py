"""Certificates, key schemes, canonical encoding and path validation."""

from eidpki.core.certificate import (
    Certificate,
    Profile,
    canonical_tbs_encode,
    sign_certificate,
)
from eidpki.core.path import (
    Anchor,
    CertPath,
    RevocationSource,
    TrustAnchorSet,
    ValidationOutcome,
    Verdict,
    build_certificate_path,
    validate_certificate_path,
)
from eidpki.core.rng import Rng
from eidpki.core.schemes import KeyPair, generate_key_pair, get_scheme, verify

__all__ = [
    "Anchor",
    "CertPath",
    "Certificate",
    "KeyPair",
    "Profile",
    "RevocationSource",
    "Rng",
    "TrustAnchorSet",
    "ValidationOutcome",
    "Verdict",
    "build_certificate_path",
    "canonical_tbs_encode",
    "generate_key_pair",
    "get_scheme",
    "sign_certificate",
    "validate_certificate_path",
    "verify",
]
