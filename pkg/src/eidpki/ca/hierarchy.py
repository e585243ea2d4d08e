"""Root, population and subordinate certification authorities.

Two sub-CA provisioning models are supported:

* Option 1 (``subordinate_external``): an e-government CA that runs its own
  infrastructure.  The root certifies its externally held public key; no
  private key of that CA ever enters a local container.
* Option 2 (``subordinate_virtual``): a CA hosted as a virtual partition on
  the population CA's HSM host, with its own key container.

Every mutation goes through :meth:`Hierarchy._commit` so that the audit log
sees it before in-memory state changes.
"""

from __future__ import annotations

import enum
import logging
import threading
import time
from collections.abc import Callable, Mapping
from dataclasses import dataclass, replace

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from eidpki.ca.keystore import KeyStore
from eidpki.ca.policy import (
    POPULATION_POLICY,
    ROOT_POLICY,
    SUBCA_POLICY,
    CertificatePolicy,
    default_policies,
)
from eidpki.core import encoding as enc
from eidpki.core.certificate import Certificate, Profile, sign_certificate
from eidpki.core.path import Anchor, TrustAnchorSet
from eidpki.core.rng import Rng, system_rng
from eidpki.core.schemes import KeyPair, generate_key_pair, get_scheme
from eidpki.errors import PkiError
from eidpki.journal import Journaled, JournalFn
from eidpki.revocation.ledger import RevocationReason, RevocationState
from eidpki.revocation.lists import CRL, PCL, generate_crl, generate_pcl
from eidpki.revocation.ocsp import OcspRequest, OcspResponse, ocsp_respond

log = logging.getLogger(__name__)

DAY = 86400
CA_KEY_BITS = 2048
USER_KEY_BITS = 4096
SIGNING_LABEL = "signing"
WRAP_LABEL = "wrap"


class CAKind(str, enum.Enum):
    ROOT = "root"
    POPULATION = "population"
    SUBORDINATE_EXTERNAL = "subordinate_external"
    SUBORDINATE_VIRTUAL = "subordinate_virtual"


class CAStatus(str, enum.Enum):
    ACTIVE = "active"
    SUSPENDED = "suspended"


@dataclass(frozen=True)
class CertificationAuthority:
    ca_id: str
    kind: CAKind
    key_container_id: str | None
    ca_certificate: Certificate
    policy_id: str
    status: CAStatus = CAStatus.ACTIVE
    parent_ca_id: str | None = None
    host_id: str | None = None

    @property
    def holds_local_keys(self) -> bool:
        return self.key_container_id is not None


@dataclass(frozen=True)
class EscrowRecord:
    certificate_serial: int
    issuer_id: str
    wrapped_private_key: bytes
    wrap_key_label: str
    created_at: int
    scheme_id: str
    key_length_bits: int

    def to_bytes(self) -> bytes:
        return enc.encode_fields(
            {
                "certificate_serial": enc.u64(self.certificate_serial),
                "created_at": enc.u64(self.created_at),
                "issuer_id": enc.text(self.issuer_id),
                "key_length_bits": enc.u64(self.key_length_bits),
                "scheme_id": enc.text(self.scheme_id),
                "wrap_key_label": enc.text(self.wrap_key_label),
                "wrapped_private_key": self.wrapped_private_key,
            }
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "EscrowRecord":
        f = enc.decode_fields(data)
        return cls(
            enc.from_u64(f["certificate_serial"]),
            enc.from_text(f["issuer_id"]),
            f["wrapped_private_key"],
            enc.from_text(f["wrap_key_label"]),
            enc.from_u64(f["created_at"]),
            enc.from_text(f["scheme_id"]),
            enc.from_u64(f["key_length_bits"]),
        )


@dataclass(frozen=True)
class Issuance:
    certificate: Certificate
    key_pair: KeyPair | None = None
    escrow: EscrowRecord | None = None


@dataclass(frozen=True)
class RevocationAck:
    ca_id: str
    serial: int
    reason: RevocationReason
    revoked_at: int
    version: int
    newly_revoked: bool


def _escrow_aad(issuer_id: str, serial: int) -> bytes:
    return enc.encode_fields({"issuer_id": enc.text(issuer_id), "serial": enc.u64(serial)})


class Hierarchy(Journaled):
    kinds = (
        "policy.registered",
        "ca.created",
        "ca.status",
        "cert.issued",
        "cert.revoked",
        "escrow.recovered",
    )

    def __init__(
        self,
        keystore: KeyStore | None = None,
        rng: Rng = system_rng,
        journal: JournalFn | None = None,
        clock: Callable[[], int] | None = None,
    ) -> None:
        super().__init__(journal)
        self.keystore = keystore or KeyStore()
        self.rng = rng
        self.clock = clock or (lambda: int(time.time()))
        self.policies: dict[str, CertificatePolicy] = {}
        self.cas: dict[str, CertificationAuthority] = {}
        self.issued: dict[str, dict[int, Certificate]] = {}
        self.ledgers: dict[str, RevocationState] = {}
        self.escrow: dict[tuple[str, int], EscrowRecord] = {}
        self.issue_context: dict[tuple[str, int], dict] = {}
        self._next_serial: dict[str, int] = {}
        self.lock = threading.RLock()

    # -- queries -------------------------------------------------------------

    @property
    def root(self) -> CertificationAuthority | None:
        for ca in self.cas.values():
            if ca.kind is CAKind.ROOT:
                return ca
        return None

    def anchors(self) -> TrustAnchorSet:
        root = self.root
        return TrustAnchorSet([Anchor.from_certificate(root.ca_certificate)] if root else [])

    def ca(self, ca_id: str) -> CertificationAuthority:
        try:
            return self.cas[ca_id]
        except KeyError:
            raise PkiError("unknown-ca", ca_id) from None

    def ca_certificate(self, subject_id: str) -> Certificate | None:
        ca = self.cas.get(subject_id)
        return ca.ca_certificate if ca else None

    def certificate(self, ca_id: str, serial: int) -> Certificate | None:
        return self.issued.get(ca_id, {}).get(serial)

    def policy(self, policy_id: str) -> CertificatePolicy:
        try:
            return self.policies[policy_id]
        except KeyError:
            raise PkiError("unknown-policy", policy_id) from None

    def signing_key(self, ca_id: str) -> KeyPair:
        ca = self.ca(ca_id)
        if ca.key_container_id is None:
            raise PkiError("no-local-key", f"{ca_id} keys are held outside this infrastructure")
        return self.keystore.get(ca.key_container_id, SIGNING_LABEL)

    def status_signer(self, ca_id: str) -> tuple[str, KeyPair]:
        """Key that signs CRLs, PCLs and OCSP answers for ``ca_id``.

        CAs without local keys (Option 1) are answered for by their parent.
        """
        ca = self.ca(ca_id)
        if ca.holds_local_keys:
            return ca_id, self.signing_key(ca_id)
        assert ca.parent_ca_id is not None
        return ca.parent_ca_id, self.signing_key(ca.parent_ca_id)

    def authorized_status_signers(self, ca_id: str) -> set[str]:
        ca = self.ca(ca_id)
        return {ca_id} | ({ca.parent_ca_id} if ca.parent_ca_id else set())

    # -- policies ------------------------------------------------------------

    def register_policy(self, policy: CertificatePolicy) -> None:
        with self.lock:
            if policy.policy_id in self.policies:
                if self.policies[policy.policy_id] == policy:
                    return
                raise PkiError("id-conflict", f"policy {policy.policy_id} exists")
            self._commit({"kind": "policy.registered", "policy": policy.as_dict()})

    def ensure_default_policies(self) -> None:
        for policy in default_policies():
            if policy.policy_id not in self.policies:
                self.register_policy(policy)

    # -- CA creation ---------------------------------------------------------

    def _validity(self, policy: CertificatePolicy, profile: Profile, validity_days: int | None, now: int,
                  not_before: int | None) -> tuple[int, int]:
        days = policy.max_validity_days if validity_days is None else validity_days
        policy.check(profile, days)
        start = now if not_before is None else not_before
        return start, start + days * DAY

    def _take_serial(self, ca_id: str) -> int:
        return self._next_serial.get(ca_id, 1)

    def _new_local_ca_keys(self, host_id: str, scheme_id: str, key_length_bits: int) -> tuple[str, KeyPair]:
        key = generate_key_pair(scheme_id, key_length_bits, self.rng)
        container = self.keystore.create_container(host_id)
        self.keystore.put(container.container_id, SIGNING_LABEL, key)
        wrap = KeyPair(b"", self.rng.bytes(32), "aes256-gcm", 256)
        self.keystore.put(container.container_id, WRAP_LABEL, wrap)
        return container.container_id, key

    def _require_active(self, ca: CertificationAuthority) -> None:
        if ca.status is not CAStatus.ACTIVE:
            raise PkiError("ca-suspended", ca.ca_id)

    def _check_new_id(self, ca_id: str) -> None:
        if ca_id in self.cas:
            raise PkiError("id-conflict", f"CA {ca_id} exists")

    def init_root_ca(
        self,
        ca_id: str = "root-ca",
        scheme_id: str = "ed25519",
        key_length_bits: int = CA_KEY_BITS,
        policy_id: str = ROOT_POLICY,
        host_id: str = "hsm-root",
        now: int | None = None,
        validity_days: int | None = None,
    ) -> CertificationAuthority:
        with self.lock:
            if self.root is not None:
                raise PkiError("root-exists", self.root.ca_id)
            self._check_new_id(ca_id)
            now = self.clock() if now is None else now
            policy = self.policy(policy_id)
            not_before, not_after = self._validity(policy, Profile.CA, validity_days, now, None)
            container_id, key = self._new_local_ca_keys(host_id, scheme_id, key_length_bits)
            cert = sign_certificate(
                key,
                serial=self._take_serial(ca_id),
                subject_id=ca_id,
                issuer_id=ca_id,
                profile=Profile.CA,
                public_key=key.public_key,
                scheme_id=scheme_id,
                key_length_bits=key_length_bits,
                not_before=not_before,
                not_after=not_after,
                policy_id=policy_id,
            )
            ca = CertificationAuthority(ca_id, CAKind.ROOT, container_id, cert, policy_id, host_id=host_id)
            self._commit_ca(ca)
            log.info("root CA %s initialised", ca_id)
            return ca

    def _issue_ca_cert(
        self,
        issuer: CertificationAuthority,
        subject_id: str,
        public_key: bytes,
        scheme_id: str,
        key_length_bits: int,
        policy_id: str,
        now: int,
        validity_days: int | None,
        gate_policy: CertificatePolicy,
    ) -> Certificate:
        self._require_active(issuer)
        not_before, not_after = self._validity(gate_policy, Profile.CA, validity_days, now, None)
        not_after = min(not_after, issuer.ca_certificate.not_after)
        return sign_certificate(
            self.signing_key(issuer.ca_id),
            serial=self._take_serial(issuer.ca_id),
            subject_id=subject_id,
            issuer_id=issuer.ca_id,
            profile=Profile.CA,
            public_key=public_key,
            scheme_id=scheme_id,
            key_length_bits=key_length_bits,
            not_before=not_before,
            not_after=not_after,
            policy_id=policy_id,
        )

    def init_population_ca(
        self,
        root: CertificationAuthority | str,
        ca_id: str = "population-ca",
        scheme_id: str | None = None,
        key_length_bits: int = CA_KEY_BITS,
        policy_id: str = POPULATION_POLICY,
        host_id: str = "hsm-population",
        now: int | None = None,
        validity_days: int | None = None,
    ) -> CertificationAuthority:
        with self.lock:
            root = self.ca(root if isinstance(root, str) else root.ca_id)
            if root.kind is not CAKind.ROOT:
                raise PkiError("request-malformed", "population CAs are certified by the root")
            self._require_active(root)
            self._check_new_id(ca_id)
            self.policy(policy_id)
            now = self.clock() if now is None else now
            scheme_id = scheme_id or root.ca_certificate.scheme_id
            # certificate first so a policy failure leaves no orphan container
            self._validity(self.policy(root.policy_id), Profile.CA, validity_days, now, None)
            container_id, key = self._new_local_ca_keys(host_id, scheme_id, key_length_bits)
            cert = self._issue_ca_cert(
                root, ca_id, key.public_key, scheme_id, key_length_bits, policy_id, now, validity_days,
                self.policy(root.policy_id),
            )
            ca = CertificationAuthority(
                ca_id, CAKind.POPULATION, container_id, cert, policy_id, parent_ca_id=root.ca_id, host_id=host_id
            )
            self._commit_ca(ca)
            return ca

    def certify_external_sub_ca(
        self,
        root: CertificationAuthority | str,
        subject_id: str,
        public_key: bytes,
        scheme_id: str,
        policy_id: str = SUBCA_POLICY,
        key_length_bits: int = CA_KEY_BITS,
        now: int | None = None,
        validity_days: int | None = None,
    ) -> Certificate:
        """Option 1: the root signs a public key the sub-CA generated itself."""
        with self.lock:
            root = self.ca(root if isinstance(root, str) else root.ca_id)
            if root.kind is not CAKind.ROOT:
                raise PkiError("request-malformed", "external sub-CAs are certified by the root")
            self._check_new_id(subject_id)
            if not isinstance(public_key, bytes) or not public_key:
                raise PkiError("request-malformed", "public key missing")
            get_scheme(scheme_id)
            policy = self.policy(policy_id)
            if not policy.allows(Profile.CA):
                raise PkiError("policy-violation", f"{policy_id} does not allow CA certificates")
            now = self.clock() if now is None else now
            cert = self._issue_ca_cert(
                root, subject_id, public_key, scheme_id, key_length_bits, policy_id, now, validity_days, policy
            )
            ca = CertificationAuthority(
                subject_id, CAKind.SUBORDINATE_EXTERNAL, None, cert, policy_id, parent_ca_id=root.ca_id
            )
            self._commit_ca(ca)
            return cert

    def provision_virtual_sub_ca(
        self,
        population: CertificationAuthority | str,
        ca_id: str,
        policy_id: str = SUBCA_POLICY,
        scheme_id: str | None = None,
        key_length_bits: int = CA_KEY_BITS,
        now: int | None = None,
        validity_days: int | None = None,
        signed_by: str = "population",
    ) -> CertificationAuthority:
        """Option 2: a virtual partition with its own container on the population host.

        ``signed_by="root"`` has the root sign the sub-CA certificate instead
        of the hosting population CA.
        """
        with self.lock:
            population = self.ca(population if isinstance(population, str) else population.ca_id)
            if population.kind is not CAKind.POPULATION:
                raise PkiError("request-malformed", "virtual sub-CAs are hosted by a population CA")
            self._require_active(population)
            self._check_new_id(ca_id)
            self.policy(policy_id)
            if signed_by == "population":
                signer = population
            elif signed_by == "root":
                signer = self.root
                self._require_active(signer)
            else:
                raise PkiError("request-malformed", f"signed_by must be population or root, not {signed_by}")
            gate = self.policy(signer.policy_id)
            now = self.clock() if now is None else now
            self._validity(gate, Profile.CA, validity_days, now, None)
            scheme_id = scheme_id or population.ca_certificate.scheme_id
            container_id, key = self._new_local_ca_keys(population.host_id, scheme_id, key_length_bits)
            cert = self._issue_ca_cert(
                signer, ca_id, key.public_key, scheme_id, key_length_bits, policy_id, now, validity_days, gate
            )
            ca = CertificationAuthority(
                ca_id,
                CAKind.SUBORDINATE_VIRTUAL,
                container_id,
                cert,
                policy_id,
                parent_ca_id=signer.ca_id,
                host_id=population.host_id,
            )
            self._commit_ca(ca)
            return ca

    def _commit_ca(self, ca: CertificationAuthority) -> None:
        self._commit(
            {
                "kind": "ca.created",
                "ca_id": ca.ca_id,
                "ca_kind": ca.kind.value,
                "container_id": ca.key_container_id,
                "host_id": ca.host_id,
                "policy_id": ca.policy_id,
                "parent_ca_id": ca.parent_ca_id,
                "cert": ca.ca_certificate.to_bytes().hex(),
            }
        )

    def set_status(self, ca_id: str, status: CAStatus | str) -> None:
        with self.lock:
            ca = self.ca(ca_id)
            if ca.status is CAStatus(status):
                return
            self._commit({"kind": "ca.status", "ca_id": ca_id, "status": CAStatus(status).value})

    # -- end entities --------------------------------------------------------

    def issue_end_entity(
        self,
        ca: CertificationAuthority | str,
        subject_id: str,
        profile: Profile | str,
        public_key: bytes | None = None,
        scheme_id: str | None = None,
        key_length_bits: int = USER_KEY_BITS,
        escrow: bool = False,
        role_attributes: Mapping[str, str] | None = None,
        validity_days: int | None = None,
        now: int | None = None,
        not_before: int | None = None,
        context: Mapping | None = None,
    ) -> Issuance:
        """Issue an end-entity certificate.

        Either ``public_key`` is supplied, or ``escrow=True`` asks the CA to
        generate an encryption key pair, keep a wrapped copy and hand the
        pair back in the result (the only time it leaves the CA).
        """
        with self.lock:
            ca = self.ca(ca if isinstance(ca, str) else ca.ca_id)
            self._require_active(ca)
            profile = Profile(profile)
            if profile is Profile.CA:
                raise PkiError("request-malformed", "CA certificates are issued through CA provisioning")
            if role_attributes is not None and profile is not Profile.ATTRIBUTE:
                raise PkiError("request-malformed", "role_attributes only on attribute certificates")
            if profile is Profile.ATTRIBUTE and not role_attributes:
                raise PkiError("request-malformed", "attribute certificates need role_attributes")
            if escrow and profile is not Profile.ENCRYPTION:
                raise PkiError("request-malformed", "key escrow applies to encryption certificates only")
            if escrow == (public_key is not None):
                raise PkiError("request-malformed", "supply exactly one of public_key or escrow")
            now = self.clock() if now is None else now
            policy = self.policy(ca.policy_id)
            start, end = self._validity(policy, profile, validity_days, now, not_before)
            issuer_key = self.signing_key(ca.ca_id)
            key_pair = None
            if escrow:
                scheme_id = scheme_id or ("test-mac" if issuer_key.scheme_id == "test-mac" else "x25519")
                key_pair = generate_key_pair(scheme_id, key_length_bits, self.rng)
                public_key = key_pair.public_key
            scheme_id = scheme_id or issuer_key.scheme_id
            get_scheme(scheme_id)
            serial = self._take_serial(ca.ca_id)
            cert = sign_certificate(
                issuer_key,
                serial=serial,
                subject_id=subject_id,
                issuer_id=ca.ca_id,
                profile=profile,
                public_key=public_key,
                scheme_id=scheme_id,
                key_length_bits=key_length_bits,
                not_before=start,
                not_after=end,
                policy_id=ca.policy_id,
                role_attributes=role_attributes,
            )
            record = None
            if key_pair is not None:
                wrap = self.keystore.get(ca.key_container_id, WRAP_LABEL)
                nonce = self.rng.bytes(12)
                wrapped = nonce + AESGCM(wrap.private_key).encrypt(
                    nonce, key_pair.private_key, _escrow_aad(ca.ca_id, serial)
                )
                record = EscrowRecord(serial, ca.ca_id, wrapped, WRAP_LABEL, now, scheme_id, key_length_bits)
            event = {"kind": "cert.issued", "ca_id": ca.ca_id, "cert": cert.to_bytes().hex()}
            if record is not None:
                event["escrow"] = record.to_bytes().hex()
            if context:
                event["context"] = dict(context)
            self._commit(event)
            return Issuance(cert, key_pair, record)

    def record_external_issuance(self, cert: Certificate, context: Mapping | None = None) -> None:
        """Register a certificate an Option-1 sub-CA issued on its own infrastructure."""
        with self.lock:
            ca = self.ca(cert.issuer_id)
            if ca.kind is not CAKind.SUBORDINATE_EXTERNAL:
                raise PkiError("request-malformed", "only external sub-CAs report issuance")
            if not cert.verify_with(ca.ca_certificate.scheme_id, ca.ca_certificate.public_key):
                raise PkiError("bad-signature", "certificate not signed by the sub-CA")
            if cert.serial in self.issued.get(ca.ca_id, {}):
                raise PkiError("duplicate-serial", f"{ca.ca_id}#{cert.serial}")
            event = {"kind": "cert.issued", "ca_id": ca.ca_id, "cert": cert.to_bytes().hex()}
            if context:
                event["context"] = dict(context)
            self._commit(event)

    def recover_escrowed_key(
        self, ca: CertificationAuthority | str, certificate_serial: int, operator_id: str, now: int | None = None
    ) -> KeyPair:
        with self.lock:
            ca = self.ca(ca if isinstance(ca, str) else ca.ca_id)
            record = self.escrow.get((ca.ca_id, certificate_serial))
            cert = self.certificate(ca.ca_id, certificate_serial)
            if record is None or cert is None or cert.profile is not Profile.ENCRYPTION:
                raise PkiError("not-escrowed", f"{ca.ca_id}#{certificate_serial}")
            if not operator_id:
                raise PkiError("unauthorized", "recovery needs an operator id")
            wrap = self.keystore.get(ca.key_container_id, record.wrap_key_label)
            try:
                private = AESGCM(wrap.private_key).decrypt(
                    record.wrapped_private_key[:12],
                    record.wrapped_private_key[12:],
                    _escrow_aad(ca.ca_id, certificate_serial),
                )
            except InvalidTag as exc:
                raise PkiError("escrow-corrupt", f"{ca.ca_id}#{certificate_serial}") from exc
            public = get_scheme(record.scheme_id).public_from_private(private)
            if public != cert.public_key:
                raise PkiError("escrow-corrupt", "recovered key does not match the certificate")
            self._commit(
                {
                    "kind": "escrow.recovered",
                    "ca_id": ca.ca_id,
                    "serial": certificate_serial,
                    "operator_id": operator_id,
                    "at": self.clock() if now is None else now,
                }
            )
            return KeyPair(public, private, record.scheme_id, record.key_length_bits)

    # -- revocation ----------------------------------------------------------

    def revoke_certificate(
        self,
        ca: CertificationAuthority | str,
        serial: int,
        reason: RevocationReason | str,
        at_time: int | None = None,
        context: Mapping | None = None,
    ) -> RevocationAck:
        with self.lock:
            ca = self.ca(ca if isinstance(ca, str) else ca.ca_id)
            reason = RevocationReason(reason)
            at_time = self.clock() if at_time is None else at_time
            cert = self.certificate(ca.ca_id, serial)
            if cert is None:
                raise PkiError("unknown-serial", f"{ca.ca_id}#{serial}")
            ledger = self.ledgers[ca.ca_id]
            existing = ledger.entries.get(serial)
            if existing is not None:
                return RevocationAck(ca.ca_id, serial, existing.reason, existing.revoked_at, ledger.version, False)
            if at_time > cert.not_after:
                raise PkiError("not-revocable", f"{ca.ca_id}#{serial} expired at {cert.not_after}")
            event = {"kind": "cert.revoked", "ca_id": ca.ca_id, "serial": serial, "reason": reason.value, "at": at_time}
            if context:
                event["context"] = dict(context)
            self._commit(event)
            return RevocationAck(ca.ca_id, serial, reason, at_time, ledger.version, True)

    # -- status products -----------------------------------------------------

    def generate_crl(self, ca_id: str, at_time: int, validity_window_seconds: int = DAY) -> CRL:
        with self.lock:
            signer_id, key = self.status_signer(ca_id)
            return generate_crl(self.ledgers[ca_id], self.issued[ca_id], key, at_time, validity_window_seconds, signer_id)

    def generate_pcl(self, ca_id: str, at_time: int) -> PCL:
        with self.lock:
            signer_id, key = self.status_signer(ca_id)
            return generate_pcl(self.ledgers[ca_id], self.issued[ca_id], key, at_time, signer_id)

    def ocsp_respond(self, request: OcspRequest, at_time: int) -> OcspResponse:
        with self.lock:
            ca = self.cas.get(request.ca_id) if isinstance(request.ca_id, str) else None
            if ca is None:
                root = self.root
                # unknown CA: answered (as malformed) by the root
                return ocsp_respond(
                    request, RevocationState(str(request.ca_id)), {}, self.signing_key(root.ca_id), at_time,
                    root.ca_id,
                )
            signer_id, key = self.status_signer(ca.ca_id)
            return ocsp_respond(request, self.ledgers[ca.ca_id], self.issued[ca.ca_id], key, at_time, signer_id)

    # -- replay --------------------------------------------------------------

    def _on_policy_registered(self, event) -> None:
        policy = CertificatePolicy.from_dict(event["policy"])
        self.policies[policy.policy_id] = policy

    def _on_ca_created(self, event) -> None:
        cert = Certificate.from_bytes(bytes.fromhex(event["cert"]))
        ca = CertificationAuthority(
            event["ca_id"],
            CAKind(event["ca_kind"]),
            event["container_id"],
            cert,
            event["policy_id"],
            parent_ca_id=event["parent_ca_id"],
            host_id=event["host_id"],
        )
        self.cas[ca.ca_id] = ca
        self.issued.setdefault(ca.ca_id, {})
        self.ledgers.setdefault(ca.ca_id, RevocationState(ca.ca_id))
        self._record_issued(cert.issuer_id, cert)

    def _record_issued(self, ca_id: str, cert: Certificate) -> None:
        self.issued.setdefault(ca_id, {})[cert.serial] = cert
        self._next_serial[ca_id] = max(self._next_serial.get(ca_id, 1), cert.serial + 1)

    def _on_ca_status(self, event) -> None:
        self.cas[event["ca_id"]] = replace(self.cas[event["ca_id"]], status=CAStatus(event["status"]))

    def _on_cert_issued(self, event) -> None:
        cert = Certificate.from_bytes(bytes.fromhex(event["cert"]))
        self._record_issued(event["ca_id"], cert)
        if "escrow" in event:
            record = EscrowRecord.from_bytes(bytes.fromhex(event["escrow"]))
            self.escrow[(event["ca_id"], cert.serial)] = record
        if "context" in event:
            self.issue_context[(event["ca_id"], cert.serial)] = event["context"]

    def _on_cert_revoked(self, event) -> None:
        self.ledgers[event["ca_id"]].add(event["serial"], RevocationReason(event["reason"]), event["at"])


class ExternalSubCA:
    """Stand-in for an Option-1 CA operating its own infrastructure.

    It generates and keeps its own key pair; the central hierarchy only ever
    sees the public key and the certificates it reports.
    """

    def __init__(self, ca_id: str, scheme_id: str = "ed25519", key_length_bits: int = CA_KEY_BITS,
                 rng: Rng = system_rng) -> None:
        self.ca_id = ca_id
        self.key = generate_key_pair(scheme_id, key_length_bits, rng)
        self.certificate: Certificate | None = None
        self._serial = 0

    def enroll_with(self, hierarchy: Hierarchy, policy_id: str = SUBCA_POLICY, now: int | None = None,
                    validity_days: int | None = None) -> Certificate:
        root = hierarchy.root
        if root is None:
            raise PkiError("unknown-ca", "no root")
        self.certificate = hierarchy.certify_external_sub_ca(
            root, self.ca_id, self.key.public_key, self.key.scheme_id, policy_id,
            self.key.key_length_bits, now, validity_days,
        )
        return self.certificate

    def issue(
        self,
        subject_id: str,
        profile: Profile | str,
        public_key: bytes,
        scheme_id: str,
        not_before: int,
        not_after: int,
        key_length_bits: int = USER_KEY_BITS,
        role_attributes: Mapping[str, str] | None = None,
    ) -> Certificate:
        assert self.certificate is not None, "enroll_with() first"
        self._serial += 1
        return sign_certificate(
            self.key,
            serial=self._serial,
            subject_id=subject_id,
            issuer_id=self.ca_id,
            profile=Profile(profile),
            public_key=public_key,
            scheme_id=scheme_id,
            key_length_bits=key_length_bits,
            not_before=not_before,
            not_after=not_after,
            policy_id=self.certificate.policy_id,
            role_attributes=role_attributes,
        )
