"""Service-provider toolkit.

One method per row of the toolkit function matrix.  Which rows open a
secure channel and which call the central services is part of the contract:

=====================  ===============  ===============================
function               secure channel   online service
=====================  ===============  ===============================
read public data       no               no
authenticate           yes (PKI)        only in ``ocsp_online`` mode
match off card         yes (MOC)        no
match on card          yes (MOC)        no
sign                   yes (PKI)        only for ``ocsp_online`` / TSA
verify signature       no               only in ``outsourced`` mode
=====================  ===============  ===============================
"""

from __future__ import annotations

import enum
import hashlib
import time
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Any

from eidpki.card import (
    SAM,
    Applet,
    Card,
    CardKey,
    FingerprintTemplate,
    card_sign,
    match_score,
    moc_match,
    open_secure_channel,
    read_certificates,
    read_fingerprint_template,
    read_public_data,
    verify_pin,
)
from eidpki.core import encoding as enc
from eidpki.core.certificate import Certificate
from eidpki.core.path import (
    TrustAnchorSet,
    ValidationOutcome,
    Verdict,
    build_certificate_path,
    check_signatures_and_validity,
    validate_certificate_path,
)
from eidpki.core.rng import Rng, system_rng
from eidpki.core.schemes import verify
from eidpki.errors import PkiError
from eidpki.revocation.lists import CRL
from eidpki.revocation.tsa import TimestampToken
from eidpki.toolkit.oracles import CrlOracle, OcspOracle


class ValidationMode(str, enum.Enum):
    CRL_LOCAL = "crl_local"
    OCSP_ONLINE = "ocsp_online"


class VerifyMode(str, enum.Enum):
    LOCAL = "local"
    OUTSOURCED = "outsourced"


class Factor(str, enum.Enum):
    POSSESSION = "possession"
    PIN = "pin"
    BIOMETRIC = "biometric"


@dataclass
class AuthResult:
    outcome: str
    factors_passed: set[Factor]
    cert_outcome: ValidationOutcome | None
    transcript: list[dict[str, Any]] = field(default_factory=list)

    @property
    def authenticated(self) -> bool:
        return self.outcome == "authenticated"


@dataclass(frozen=True)
class SignedDocument:
    document_hash: bytes
    signature: bytes
    signer_cert_serial: int
    signer_ca_id: str
    signing_time: int
    signer_certificate: Certificate
    timestamp_token: TimestampToken | None = None

    def as_dict(self) -> dict:
        return {
            "document_hash": self.document_hash.hex(),
            "signature": self.signature.hex(),
            "signer_cert_serial": self.signer_cert_serial,
            "signer_ca_id": self.signer_ca_id,
            "signing_time": self.signing_time,
            "signer_certificate": self.signer_certificate.to_bytes().hex(),
            "timestamp_token": self.timestamp_token.as_dict() if self.timestamp_token else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SignedDocument":
        token = d.get("timestamp_token")
        return cls(
            bytes.fromhex(d["document_hash"]),
            bytes.fromhex(d["signature"]),
            int(d["signer_cert_serial"]),
            d["signer_ca_id"],
            int(d["signing_time"]),
            Certificate.from_bytes(bytes.fromhex(d["signer_certificate"])),
            TimestampToken.from_dict(token) if token else None,
        )


@dataclass(frozen=True)
class IdentityRecord:
    card_id: str
    biographic: dict[str, str]
    portrait_hash: bytes


def document_digest(document: bytes) -> bytes:
    return hashlib.sha256(document).digest()


def verify_signed_hash(
    document_hash: bytes,
    signature: bytes,
    signer: Certificate,
    ca_lookup: Callable[[str], Certificate | None],
    anchors: TrustAnchorSet,
    oracle,
    at_time: int,
    transcript: list | None = None,
) -> ValidationOutcome:
    """Signature verification, path build, path validation, in that order.

    Shared by local verification and the central outsourced service so the
    two modes cannot drift apart.
    """
    steps = transcript if transcript is not None else []
    source = oracle.source
    if not verify(signer.scheme_id, signer.public_key, document_hash, signature):
        steps.append({"step": "signature", "ok": False})
        return ValidationOutcome(Verdict.BAD_SIGNATURE, at_time, source, "document signature does not verify")
    steps.append({"step": "signature", "ok": True})
    try:
        path = build_certificate_path(signer, ca_lookup, anchors)
    except PkiError as err:
        steps.append({"step": "path_build", "ok": False, "detail": err.detail})
        return ValidationOutcome(Verdict.NO_PATH, at_time, source, err.detail)
    steps.append({"step": "path_build", "ok": True, "length": len(path)})
    outcome = validate_certificate_path(path, anchors, oracle, at_time)
    steps.append({"step": "path_validation", "ok": outcome.valid, "verdict": outcome.verdict.value})
    return outcome


class Toolkit:
    """Relying-party toolkit bound to a trust configuration.

    ``ca_lookup`` resolves CA certificates by subject (the local certificate
    repository).  ``crls`` holds CRLs the application downloaded; ``services``
    is a :class:`~eidpki.service.client.ServiceClient` for online calls.
    """

    def __init__(
        self,
        anchors: TrustAnchorSet,
        ca_lookup: Callable[[str], Certificate | None],
        services=None,
        crls: Mapping[str, CRL] | None = None,
        rng: Rng = system_rng,
        clock: Callable[[], int] | None = None,
    ) -> None:
        self.anchors = anchors
        self.ca_lookup = ca_lookup
        self.services = services
        self.crls: dict[str, CRL] = dict(crls or {})
        self.rng = rng
        self.clock = clock or (lambda: int(time.time()))

    # -- plumbing ------------------------------------------------------------

    def _oracle(self, mode: ValidationMode):
        mode = ValidationMode(mode)
        if mode is ValidationMode.CRL_LOCAL:
            return CrlOracle(self.crls, self.ca_lookup, self.anchors)
        if self.services is None:
            raise PkiError("validation-unavailable", "no online responder configured")
        return OcspOracle(self.services, self.ca_lookup, self.anchors, self.rng)

    def validate_certificate(self, cert: Certificate, mode: ValidationMode, at_time: int | None = None) -> ValidationOutcome:
        at_time = self.clock() if at_time is None else at_time
        oracle = self._oracle(mode)
        try:
            path = build_certificate_path(cert, self.ca_lookup, self.anchors)
        except PkiError as err:
            return ValidationOutcome(Verdict.NO_PATH, at_time, oracle.source, err.detail)
        return validate_certificate_path(path, self.anchors, oracle, at_time)

    # -- read public data ----------------------------------------------------

    def tk_read_public_data(self, card: Card, at_time: int | None = None) -> IdentityRecord:
        """Offline: verify the issuer chain (no revocation) and every file signature."""
        at_time = self.clock() if at_time is None else at_time
        files = read_public_data(card)
        issuer = read_certificates(card).issuer
        try:
            path = build_certificate_path(issuer, self.ca_lookup, self.anchors)
        except PkiError as err:
            raise PkiError("data-tampered", f"issuer certificate: {err.detail}") from None
        failure = check_signatures_and_validity(path, self.anchors, at_time)
        if failure is not None:
            raise PkiError("data-tampered", f"issuer certificate: {failure[1]}")
        for f in files:
            if not f.verify(issuer.scheme_id, issuer.public_key):
                raise PkiError("data-tampered", f"file {f.file_id} signature invalid")
        by_id = {f.file_id: f.content for f in files}
        if "biographic" not in by_id:
            raise PkiError("data-tampered", "biographic file missing")
        return IdentityRecord(
            card.card_id,
            enc.decode_str_map(by_id["biographic"]),
            by_id.get("portrait_hash", b""),
        )

    # -- authentication ------------------------------------------------------

    def tk_authenticate(
        self,
        card: Card,
        sam: SAM,
        pin: str,
        mode: ValidationMode | str,
        challenge_source: Rng | None = None,
        biometric_probe: FingerprintTemplate | None = None,
        at_time: int | None = None,
    ) -> AuthResult:
        """Channel, PIN, challenge-response, certificate validation, biometric.

        Raises ``validation-unavailable`` / ``crl-stale`` instead of denying
        when the configured validation resource cannot answer.
        """
        mode = ValidationMode(mode)
        rng = challenge_source or self.rng
        at_time = self.clock() if at_time is None else at_time
        factors: set[Factor] = set()
        steps: list[dict[str, Any]] = []

        def denied(outcome: ValidationOutcome | None = None) -> AuthResult:
            return AuthResult("denied", factors, outcome, steps)

        try:
            channel = open_secure_channel(card, sam, Applet.PKI, rng)
        except PkiError as err:
            steps.append({"step": "secure_channel", "ok": False, "error": err.code})
            return denied()
        steps.append({"step": "secure_channel", "ok": True})
        factors.add(Factor.POSSESSION)
        try:
            try:
                pin_result = verify_pin(channel, pin)
            except PkiError as err:
                steps.append({"step": "pin", "ok": False, "error": err.code})
                return denied()
            steps.append({"step": "pin", "ok": pin_result.ok, "result": pin_result.result,
                          "retries_remaining": pin_result.retries_remaining})
            if not pin_result.ok:
                return denied()
            factors.add(Factor.PIN)

            auth_cert = read_certificates(card).auth
            challenge = rng.bytes(32)
            try:
                response = card_sign(channel, CardKey.AUTH, challenge)
            except PkiError as err:
                steps.append({"step": "challenge", "ok": False, "error": err.code})
                return denied()
            bound = verify(auth_cert.scheme_id, auth_cert.public_key, challenge, response)
            steps.append({"step": "challenge", "ok": bound, "challenge": challenge.hex()})
            if not bound:
                factors.discard(Factor.POSSESSION)
                return denied()
        finally:
            channel.close()

        outcome = self.validate_certificate(auth_cert, mode, at_time)
        steps.append({"step": "certificate", "ok": outcome.valid, "mode": mode.value, **outcome.as_dict()})
        if not outcome.valid:
            return denied(outcome)

        if biometric_probe is not None:
            try:
                with open_secure_channel(card, sam, Applet.MOC, rng) as moc:
                    decision, score = moc_match(moc, biometric_probe)
            except PkiError as err:
                steps.append({"step": "biometric", "ok": False, "error": err.code})
                return denied(outcome)
            steps.append({"step": "biometric", "ok": decision, "score": score})
            if not decision:
                return denied(outcome)
            factors.add(Factor.BIOMETRIC)
        return AuthResult("authenticated", factors, outcome, steps)

    # -- biometrics ----------------------------------------------------------

    def tk_match_off_card(
        self, card: Card, sam: SAM, live_probe: FingerprintTemplate, threshold: float | None = None
    ) -> bool:
        """Read the enrolled template over secure messaging and match locally."""
        threshold = card.threshold if threshold is None else threshold
        try:
            with open_secure_channel(card, sam, Applet.MOC, self.rng) as channel:
                enrolled = read_fingerprint_template(channel)
        except PkiError as err:
            if err.code == "channel-refused":
                raise PkiError("possession-failed", err.detail) from None
            raise
        return match_score(enrolled, live_probe) >= threshold

    def tk_match_on_card(self, card: Card, sam: SAM, live_probe: FingerprintTemplate) -> bool:
        try:
            with open_secure_channel(card, sam, Applet.MOC, self.rng) as channel:
                decision, _ = moc_match(channel, live_probe)
        except PkiError as err:
            if err.code == "channel-refused":
                raise PkiError("possession-failed", err.detail) from None
            raise
        return decision

    # -- signatures ----------------------------------------------------------

    def tk_sign(
        self,
        card: Card,
        sam: SAM,
        pin: str,
        document_bytes: bytes,
        request_timestamp: bool = False,
        mode: ValidationMode | str = ValidationMode.CRL_LOCAL,
        at_time: int | None = None,
    ) -> SignedDocument:
        at_time = self.clock() if at_time is None else at_time
        sign_cert = read_certificates(card).sign
        outcome = self.validate_certificate(sign_cert, ValidationMode(mode), at_time)
        if not outcome.valid:
            raise PkiError("signing-refused", f"signature certificate {outcome.verdict.value}")
        digest = document_digest(document_bytes)
        with open_secure_channel(card, sam, Applet.PKI, self.rng) as channel:
            result = verify_pin(channel, pin)
            if result.result == "blocked":
                raise PkiError("pin-blocked")
            if not result.ok:
                raise PkiError("pin-required", f"wrong PIN, {result.retries_remaining} retries left")
            signature = card_sign(channel, CardKey.SIGN, digest, confirm=True)
        token = None
        if request_timestamp:
            if self.services is None:
                raise PkiError("validation-unavailable", "no timestamp service configured")
            token = self.services.tsa_stamp(digest)
        return SignedDocument(digest, signature, sign_cert.serial, sign_cert.issuer_id, at_time, sign_cert, token)

    def tk_verify_signature(
        self,
        doc: SignedDocument,
        mode: VerifyMode | str = VerifyMode.LOCAL,
        at_time: int | None = None,
        transcript: list | None = None,
    ) -> ValidationOutcome:
        mode = VerifyMode(mode)
        at_time = self.clock() if at_time is None else at_time
        if mode is VerifyMode.OUTSOURCED:
            if self.services is None:
                raise PkiError("validation-unavailable", "no validation service configured")
            if transcript is not None:
                transcript.append({"step": "outsourced", "ok": True})
            return self.services.validate_signature(doc.document_hash, doc.signature, doc.signer_ca_id,
                                                    doc.signer_cert_serial, at_time)
        cert = doc.signer_certificate
        if cert.serial != doc.signer_cert_serial or cert.issuer_id != doc.signer_ca_id:
            return ValidationOutcome(Verdict.BAD_SIGNATURE, at_time, "crl", "embedded certificate mismatch")
        oracle = CrlOracle(self.crls, self.ca_lookup, self.anchors)
        return verify_signed_hash(doc.document_hash, doc.signature, cert, self.ca_lookup, self.anchors, oracle,
                                  at_time, transcript)
