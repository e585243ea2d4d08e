"""Smart-card emulator: ID, PKI and match-on-card applets behind secure messaging."""

from eidpki.card.card import (
    Applet,
    Card,
    CardKey,
    PinState,
    PublicDataFile,
    hash_pin,
    unblock_message,
)
from eidpki.card.sam import SAM
from eidpki.card.template import FingerprintTemplate, match_score
from eidpki.card.terminal import (
    CardCertificates,
    PinResult,
    SecureChannel,
    card_sign,
    moc_match,
    open_secure_channel,
    read_certificates,
    read_fingerprint_template,
    read_public_data,
    unblock_pin,
    verify_pin,
)

__all__ = [
    "SAM",
    "Applet",
    "Card",
    "CardCertificates",
    "CardKey",
    "FingerprintTemplate",
    "PinResult",
    "PinState",
    "PublicDataFile",
    "SecureChannel",
    "card_sign",
    "hash_pin",
    "match_score",
    "moc_match",
    "open_secure_channel",
    "read_certificates",
    "read_fingerprint_template",
    "read_public_data",
    "unblock_message",
    "unblock_pin",
    "verify_pin",
]
