"""The central authority: every stateful service behind one writer.

State lives in memory and is rebuilt at start-up by replaying the audit
log.  Mutations are journaled through the log before they are applied, and
workflows that touch several components (enrollment, card lifecycle) write
one audit record holding all of their events, so a crash leaves either all
or none of them.

On-disk layout under ``home``::

    audit.log                  hash-chained event records (source of truth)
    hsm/<host>/<container>     emulated HSM key containers
    ca/<ca_id>/meta            derived, rebuilt from the log at start-up
    ca/<ca_id>/issued/<serial>
    ca/<ca_id>/escrow/<serial>
    cards/<card_id>            card images (secrets sealed)
    registry/fixtures          registry table (JSON)
"""

from __future__ import annotations

import contextlib
import enum
import hashlib
import logging
import shutil
import threading
import time
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from eidpki.ca.hierarchy import (
    CA_KEY_BITS,
    USER_KEY_BITS,
    CertificationAuthority,
    Hierarchy,
)
from eidpki.ca.keystore import KeyStore, atomic_write
from eidpki.ca.policy import ROOT_POLICY
from eidpki.card import (
    SAM,
    Applet,
    Card,
    open_secure_channel,
    unblock_message,
    unblock_pin,
)
from eidpki.card.card import check_pin_format
from eidpki.core import encoding as enc
from eidpki.core.certificate import Certificate, Profile
from eidpki.core.path import RevocationSource
from eidpki.core.rng import Rng
from eidpki.core.schemes import KeyPair, generate_key_pair, sign, verify
from eidpki.errors import PkiError
from eidpki.revocation.gateway import BlockMode, Gateway
from eidpki.revocation.ledger import RevocationReason, classify
from eidpki.revocation.tsa import TimestampAuthority
from eidpki.service.audit import AuditLog
from eidpki.service.enrollment import (
    ApplicationStatus,
    EnrollmentApplication,
    Registry,
    RegistryRecord,
)

log = logging.getLogger(__name__)

SEAL_LABEL = "card-seal"
SM_LABEL = "sm-master-1"
DOC_SIGNER_LABEL = "signing"
OPERATOR_PREFIX = "operator:"


class CardStatus(str, enum.Enum):
    ACTIVE = "active"
    REPLACED = "replaced"
    REVOKED = "revoked"


class LifecycleAction(str, enum.Enum):
    RENEW = "renew"
    REPLACE = "replace"
    REVOKE = "revoke"
    UNLOCK = "unlock"


@dataclass(frozen=True)
class CardRecord:
    card_id: str
    applicant_id: str
    auth: tuple[str, int]
    sign: tuple[str, int]
    status: CardStatus = CardStatus.ACTIVE


@dataclass(frozen=True)
class EnrollmentResult:
    application: EnrollmentApplication
    card: Card | None = None
    certificates: tuple[Certificate, ...] = ()

    @property
    def issued(self) -> bool:
        return self.application.status is ApplicationStatus.ISSUED


@dataclass(frozen=True)
class OperatorCredential:
    certificate: Certificate
    key: KeyPair = field(repr=False)

    def to_text(self) -> str:
        secret = enc.encode_fields(
            {
                "key_length_bits": enc.u64(self.key.key_length_bits),
                "private_key": self.key.private_key,
                "public_key": self.key.public_key,
                "scheme_id": enc.text(self.key.scheme_id),
            }
        )
        return self.certificate.armored() + enc.armor("EIDPKI OPERATOR KEY", secret)

    @classmethod
    def from_text(cls, text: str) -> "OperatorCredential":
        cert_part, _, key_part = text.partition("-----END EIDPKI CERTIFICATE-----")
        cert = Certificate.from_armored(cert_part + "-----END EIDPKI CERTIFICATE-----")
        k = enc.decode_fields(enc.dearmor("EIDPKI OPERATOR KEY", key_part))
        key = KeyPair(k["public_key"], k["private_key"], enc.from_text(k["scheme_id"]),
                      enc.from_u64(k["key_length_bits"]))
        return cls(cert, key)

    def authorize(self, card_id: str, action: str) -> "OperatorAuth":
        return OperatorAuth(self.certificate, sign(self.key, lifecycle_message(card_id, action)))


@dataclass(frozen=True)
class OperatorAuth:
    certificate: Certificate
    signature: bytes


def lifecycle_message(card_id: str, action: str) -> bytes:
    return enc.encode_fields({"action": enc.text(action), "card_id": enc.text(card_id)})


class LedgerOracle:
    """Direct view of the authority's own ledgers (what its responder serves)."""

    source = RevocationSource.OCSP

    def __init__(self, hierarchy: Hierarchy) -> None:
        self.hierarchy = hierarchy

    def status(self, cert: Certificate, at_time: int) -> str:
        known = self.hierarchy.certificate(cert.issuer_id, cert.serial)
        if known is None or known.to_bytes() != cert.to_bytes():
            return "unknown"
        return classify(known, self.hierarchy.ledgers[cert.issuer_id].is_revoked(cert.serial), at_time).value


def _derive_seed(seed: int, position: str, label: str) -> int:
    return int.from_bytes(hashlib.sha256(f"{seed}:{position}:{label}".encode()).digest()[:8], "big")


class Authority:
    def __init__(
        self,
        home: Path | str | None = None,
        seed: int | None = None,
        clock: Callable[[], int] | None = None,
        actor: str = "system",
        crl_window: int = 86400,
        rng_label: str = "",
        read_only: bool = False,
    ) -> None:
        self.home = Path(home) if home is not None else None
        self.clock = clock or (lambda: int(time.time()))
        self.actor = actor
        self.crl_window = crl_window
        self.lock = threading.RLock()
        self.read_only = read_only
        self.audit = AuditLog(self.home / "audit.log" if self.home else None, read_only)
        self.keystore = KeyStore(self.home / "hsm" if self.home else None)
        # a seeded authority draws a fresh, reproducible stream per log position
        # (and per HSM size, so a retried failed command never regenerates a stored key)
        self.seed = seed
        position = f"{self.audit.last_sequence}/{self.keystore.key_pair_count()}"
        self.rng = Rng(_derive_seed(seed, position, rng_label)) if seed is not None else Rng()
        self.hierarchy = Hierarchy(self.keystore, self.rng, self._journal, self.clock)
        self.gateway = Gateway(self._journal)
        self.tsa: TimestampAuthority | None = None
        self.registry = Registry.from_fixture(self.home / "registry" / "fixtures") if self.home else Registry()
        self.applications: dict[str, EnrollmentApplication] = {}
        self.cards: dict[str, CardRecord] = {}
        self.issuer: dict[str, Any] | None = None
        self.operators: dict[str, Certificate] = {}
        self._batch: list[dict] | None = None
        self._pcl_cache: dict[tuple, Any] = {}
        self._card_cache: dict[str, Card] = {}
        self._replay()
        for component in (self.hierarchy, self.gateway):
            component.observers.append(self._observe)
        if not read_only:
            self._rebuild_derived_files()

    # -- journaling ----------------------------------------------------------

    def _journal(self, event: dict) -> None:
        event = {**event}
        if self._batch is not None:
            self._batch.append(event)
            return
        self.audit.append(self.clock(), self.actor, event["kind"], _subject(event), [event])

    @contextlib.contextmanager
    def transaction(self, action: str, subject: str) -> Iterator[None]:
        """Group every event of a workflow into one audit record."""
        with self.lock:
            if self._batch is not None:
                yield
                return
            self._batch = []
            try:
                yield
            finally:
                batch, self._batch = self._batch, None
                # written even on failure: memory already holds these events
                if batch:
                    self.audit.append(self.clock(), self.actor, action, subject, batch)

    def _commit(self, event: dict) -> None:
        self._journal(event)
        self._apply_own(event)

    @property
    def state_version(self) -> int:
        return self.audit.last_sequence

    def _components(self):
        comps = [self.hierarchy, self.gateway]
        if self.tsa is not None:
            comps.append(self.tsa)
        return comps

    def _replay(self) -> None:
        for record in self.audit.events:
            for event in record.payload:
                handled = False
                for comp in self._components():
                    if comp.handles(event):
                        comp.apply(event)
                        handled = True
                if not handled:
                    self._apply_own(event)
        log.debug("replayed %d audit records", len(self.audit.events))

    def _apply_own(self, event: dict) -> None:
        kind = event["kind"]
        if kind == "service.tsa":
            key = self.keystore.get(event["container_id"], "signing")
            cert = Certificate.from_bytes(bytes.fromhex(event["cert"]))
            self.tsa = TimestampAuthority(key, cert, self.clock, self._journal)
        elif kind == "service.issuer":
            self.issuer = dict(event)
        elif kind == "operator.issued":
            cert = Certificate.from_bytes(bytes.fromhex(event["cert"]))
            self.operators[event["operator_id"]] = cert
        elif kind in ("application.rejected", "card.enrolled", "card.replaced"):
            app = EnrollmentApplication.from_dict(event["application"])
            self.applications[app.applicant_id] = app
        if kind in ("card.enrolled", "card.replaced", "card.renewed"):
            self.cards[event["card_id"]] = CardRecord(
                event["card_id"], event["applicant_id"], tuple(event["auth"]), tuple(event["sign"])
            )
        if kind == "card.replaced":
            old = self.cards[event["old_card_id"]]
            self.cards[old.card_id] = replace(old, status=CardStatus.REPLACED)
        elif kind == "card.revoked":
            self.cards[event["card_id"]] = replace(self.cards[event["card_id"]], status=CardStatus.REVOKED)

    # -- derived files -------------------------------------------------------

    def _observe(self, event: dict) -> None:
        if self.home is None:
            return
        kind = event["kind"]
        if kind in ("ca.created", "ca.status"):
            self._write_ca_meta(self.hierarchy.ca(event["ca_id"]))
        if kind in ("ca.created", "cert.issued"):
            cert = Certificate.from_bytes(bytes.fromhex(event["cert"]))
            self._write_issued(cert.issuer_id, cert)
            record = self.hierarchy.escrow.get((cert.issuer_id, cert.serial))
            if record is not None:
                atomic_write(self.home / "ca" / cert.issuer_id / "escrow" / str(cert.serial),
                             enc.armor("EIDPKI ESCROW", record.to_bytes()))

    def _write_ca_meta(self, ca: CertificationAuthority) -> None:
        meta = enc.encode_fields(
            {
                "ca_certificate": ca.ca_certificate.to_bytes(),
                "ca_id": enc.text(ca.ca_id),
                "host_id": enc.text(ca.host_id or ""),
                "key_container_id": enc.text(ca.key_container_id or ""),
                "kind": enc.text(ca.kind.value),
                "parent_ca_id": enc.text(ca.parent_ca_id or ""),
                "policy_id": enc.text(ca.policy_id),
                "status": enc.text(ca.status.value),
            }
        )
        atomic_write(self.home / "ca" / ca.ca_id / "meta", enc.armor("EIDPKI CA", meta))

    def _write_issued(self, ca_id: str, cert: Certificate) -> None:
        path = self.home / "ca" / ca_id / "issued" / str(cert.serial)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(cert.armored())

    def _rebuild_derived_files(self) -> None:
        """Make ``ca/`` an exact image of the replayed state."""
        if self.home is None:
            return
        ca_dir = self.home / "ca"
        if ca_dir.exists():
            shutil.rmtree(ca_dir)
        for ca in self.hierarchy.cas.values():
            self._write_ca_meta(ca)
        for ca_id, issued in self.hierarchy.issued.items():
            for cert in issued.values():
                self._write_issued(ca_id, cert)
        for (ca_id, serial), record in self.hierarchy.escrow.items():
            atomic_write(ca_dir / ca_id / "escrow" / str(serial), enc.armor("EIDPKI ESCROW", record.to_bytes()))

    # -- bootstrap -----------------------------------------------------------

    def init_root(self, ca_id: str = "root-ca", scheme_id: str = "ed25519",
                  key_length_bits: int = CA_KEY_BITS) -> CertificationAuthority:
        """Root CA, default policies and the timestamp authority under the root."""
        with self.transaction("ca.init-root", ca_id):
            self.hierarchy.ensure_default_policies()
            root = self.hierarchy.init_root_ca(ca_id, scheme_id, key_length_bits, ROOT_POLICY, now=self.clock())
            tsa_key = generate_key_pair(scheme_id, CA_KEY_BITS, self.rng)
            container = self.keystore.create_container(root.host_id)
            self.keystore.put(container.container_id, "signing", tsa_key)
            issuance = self.hierarchy.issue_end_entity(
                root, "tsa", Profile.DEVICE, public_key=tsa_key.public_key, scheme_id=scheme_id,
                key_length_bits=CA_KEY_BITS, now=self.clock(), context={"workflow": "bootstrap"},
            )
            self._commit({"kind": "service.tsa", "container_id": container.container_id,
                          "cert": issuance.certificate.to_bytes().hex()})
            return root

    def init_population(self, ca_id: str = "population-ca", key_length_bits: int = CA_KEY_BITS) -> CertificationAuthority:
        """Population CA plus its card-issuing credentials (document signer, seal and SM keys)."""
        root = self._root()
        with self.transaction("ca.init-population", ca_id):
            pop = self.hierarchy.init_population_ca(root, ca_id, key_length_bits=key_length_bits, now=self.clock())
            scheme_id = pop.ca_certificate.scheme_id
            signer = generate_key_pair(scheme_id, CA_KEY_BITS, self.rng)
            container = self.keystore.create_container(pop.host_id)
            self.keystore.put(container.container_id, DOC_SIGNER_LABEL, signer)
            self.keystore.put(container.container_id, SEAL_LABEL, KeyPair(b"", self.rng.bytes(32), "aes256-gcm", 256))
            self.keystore.put(container.container_id, SM_LABEL, KeyPair(b"", self.rng.bytes(32), "sm-master", 256))
            issuance = self.hierarchy.issue_end_entity(
                pop, "document-signer", Profile.DEVICE, public_key=signer.public_key, scheme_id=scheme_id,
                key_length_bits=CA_KEY_BITS, now=self.clock(), context={"workflow": "bootstrap"},
            )
            self._commit(
                {
                    "kind": "service.issuer",
                    "population_ca_id": pop.ca_id,
                    "container_id": container.container_id,
                    "cert": issuance.certificate.to_bytes().hex(),
                }
            )
            return pop

    def _root(self) -> CertificationAuthority:
        root = self.hierarchy.root
        if root is None:
            raise PkiError("unknown-ca", "no root CA; run init-root first")
        return root

    def _issuer(self) -> dict[str, Any]:
        if self.issuer is None:
            raise PkiError("unknown-ca", "no population CA; run init-population first")
        return self.issuer

    @property
    def population_ca_id(self) -> str:
        return self._issuer()["population_ca_id"]

    def document_signer(self) -> tuple[Certificate, KeyPair]:
        issuer = self._issuer()
        return (Certificate.from_bytes(bytes.fromhex(issuer["cert"])),
                self.keystore.get(issuer["container_id"], DOC_SIGNER_LABEL))

    def _seal_key(self) -> bytes:
        return self.keystore.get(self._issuer()["container_id"], SEAL_LABEL).private_key

    def sm_master_key(self) -> bytes:
        return self.keystore.get(self._issuer()["container_id"], SM_LABEL).private_key

    def issuer_sam(self, sam_id: str = "issuer-sam") -> SAM:
        return SAM(sam_id, {SM_LABEL: self.sm_master_key()})

    def admin_unblock_token(self, card_id: str) -> bytes:
        _, key = self.document_signer()
        return sign(key, unblock_message(card_id))

    def issue_operator(self, operator_id: str) -> OperatorCredential:
        root = self._root()
        with self.transaction("operator.issue", operator_id):
            if operator_id in self.operators:
                raise PkiError("id-conflict", f"operator {operator_id} exists")
            key = generate_key_pair(root.ca_certificate.scheme_id, USER_KEY_BITS, self.rng)
            issuance = self.hierarchy.issue_end_entity(
                root, OPERATOR_PREFIX + operator_id, Profile.DEVICE, public_key=key.public_key,
                scheme_id=key.scheme_id, now=self.clock(), validity_days=365,
                context={"workflow": "operator", "operator_id": operator_id},
            )
            self._commit({"kind": "operator.issued", "operator_id": operator_id,
                          "cert": issuance.certificate.to_bytes().hex()})
            return OperatorCredential(issuance.certificate, key)

    # -- cards ---------------------------------------------------------------

    def card_path(self, card_id: str) -> Path:
        assert self.home is not None
        return self.home / "cards" / card_id

    def save_card(self, card: Card) -> None:
        self._card_cache[card.card_id] = card
        if self.home is not None:
            atomic_write(self.card_path(card.card_id), card.armored(self._seal_key(), self.rng))

    def load_card(self, card_id: str) -> Card:
        if card_id not in self.cards:
            raise PkiError("unknown-card", card_id)
        if card_id in self._card_cache:
            return self._card_cache[card_id]
        if self.home is None or not self.card_path(card_id).exists():
            raise PkiError("unknown-card", f"no card image for {card_id}")
        card = Card.from_armored(self.card_path(card_id).read_text(), self._seal_key(), self.rng)
        self._card_cache[card_id] = card
        return card

    def _next_card_id(self) -> str:
        return f"card-{len(self.cards) + 1:06d}"

    def _issue_card(self, application: EnrollmentApplication, pin: str, workflow: str,
                    card_id: str) -> tuple[Card, Certificate, Certificate]:
        pop = self.hierarchy.ca(self.population_ca_id)
        scheme_id = pop.ca_certificate.scheme_id
        now = self.clock()
        context = {"workflow": workflow, "applicant_id": application.applicant_id, "card_id": card_id}
        auth_pair = generate_key_pair(scheme_id, USER_KEY_BITS, self.rng)
        sign_pair = generate_key_pair(scheme_id, USER_KEY_BITS, self.rng)
        auth = self.hierarchy.issue_end_entity(
            pop, application.applicant_id, Profile.IDENTITY_AUTH, public_key=auth_pair.public_key,
            scheme_id=scheme_id, key_length_bits=USER_KEY_BITS, now=now, context=context,
        ).certificate
        signing = self.hierarchy.issue_end_entity(
            pop, application.applicant_id, Profile.SIGNATURE, public_key=sign_pair.public_key,
            scheme_id=scheme_id, key_length_bits=USER_KEY_BITS, now=now, context=context,
        ).certificate
        signer_cert, signer_key = self.document_signer()
        card = Card.personalize(
            card_id,
            {
                "biographic": enc.encode_str_map(application.biographic),
                "card_id": enc.text(card_id),
                "portrait_hash": application.portrait_hash,
            },
            signer_key,
            signer_cert,
            auth_pair,
            auth,
            sign_pair,
            signing,
            pin,
            application.fingerprints[0],
            SM_LABEL,
            self.sm_master_key(),
            rng=self.rng,
        )
        self.save_card(card)
        return card, auth, signing

    def enroll(self, application: EnrollmentApplication, pin: str,
               registry_record: RegistryRecord | None = None) -> EnrollmentResult:
        """Registry checks, then certificate issuance and card personalization."""
        with self.lock:
            aid = application.applicant_id
            existing = self.applications.get(aid)
            if existing is not None and existing.status is ApplicationStatus.ISSUED:
                raise PkiError("already-issued", aid)
            if application.status is not ApplicationStatus.CAPTURED:
                raise PkiError("invalid-transition", f"application is {application.status.value}")
            check_pin_format(pin)
            record = registry_record or self.registry.lookup(aid)
            with self.transaction("enroll", aid):
                if not record.clears:
                    rejected = application.advance(ApplicationStatus.REJECTED, record.rejection_reason())
                    self._commit({"kind": "application.rejected", "applicant_id": aid,
                                  "application": rejected.as_dict()})
                    return EnrollmentResult(rejected)
                verified = application.advance(ApplicationStatus.VERIFIED)
                card_id = self._next_card_id()
                card, auth, signing = self._issue_card(verified, pin, "enroll", card_id)
                issued = verified.advance(ApplicationStatus.ISSUED)
                self._commit(
                    {
                        "kind": "card.enrolled",
                        "card_id": card_id,
                        "applicant_id": aid,
                        "application": issued.as_dict(),
                        "auth": [auth.issuer_id, auth.serial],
                        "sign": [signing.issuer_id, signing.serial],
                    }
                )
                return EnrollmentResult(issued, card, (auth, signing))

    # -- lifecycle -----------------------------------------------------------

    def verify_operator(self, auth: OperatorAuth, card_id: str, action: str) -> str:
        cert = auth.certificate
        root = self._root()
        known = self.hierarchy.certificate(cert.issuer_id, cert.serial)
        if (
            known is None
            or known.to_bytes() != cert.to_bytes()
            or cert.issuer_id != root.ca_id
            or cert.profile is not Profile.DEVICE
            or not cert.subject_id.startswith(OPERATOR_PREFIX)
        ):
            raise PkiError("unauthorized", "not an operator credential issued by the root")
        if LedgerOracle(self.hierarchy).status(cert, self.clock()) != "good":
            raise PkiError("unauthorized", "operator credential is not currently valid")
        if not verify(cert.scheme_id, cert.public_key, lifecycle_message(card_id, action), auth.signature):
            raise PkiError("unauthorized", "operator signature does not verify")
        return cert.subject_id[len(OPERATOR_PREFIX):]

    def lifecycle(self, card_id: str, action: LifecycleAction | str, auth: OperatorAuth,
                  new_pin: str | None = None) -> dict[str, Any]:
        action = LifecycleAction(action)
        with self.lock:
            if card_id not in self.cards:
                raise PkiError("unknown-card", card_id)
            operator = self.verify_operator(auth, card_id, action.value)
            record = self.cards[card_id]
            if record.status is not CardStatus.ACTIVE:
                raise PkiError("card-inactive", f"{card_id} is {record.status.value}")
            now = self.clock()
            with self.transaction(f"lifecycle.{action.value}", card_id):
                if action is LifecycleAction.RENEW:
                    return self._renew(record, operator, now)
                if action is LifecycleAction.REPLACE:
                    if new_pin is None:
                        raise PkiError("request-malformed", "replacement needs a PIN for the new card")
                    return self._replace(record, operator, now, new_pin)
                if action is LifecycleAction.REVOKE:
                    ctx = {"workflow": "revoke", "card_id": card_id, "operator": operator}
                    for ca_id, serial in (record.auth, record.sign):
                        self.hierarchy.revoke_certificate(ca_id, serial, RevocationReason.ADMINISTRATIVE, now, ctx)
                    self.gateway.block(card_id, BlockMode.PERMANENT, now)
                    self._commit({"kind": "card.revoked", "card_id": card_id, "operator": operator})
                    return {"card_id": card_id, "revoked": [list(record.auth), list(record.sign)]}
                if new_pin is None:
                    raise PkiError("request-malformed", "unlock needs a new PIN")
                card = self.load_card(card_id)
                with open_secure_channel(card, self.issuer_sam(), Applet.PKI, self.rng) as channel:
                    unblock_pin(channel, self.admin_unblock_token(card_id), new_pin)
                self.save_card(card)
                self._commit({"kind": "card.unlocked", "card_id": card_id, "operator": operator})
                return {"card_id": card_id, "unlocked": True}

    def _renew(self, record: CardRecord, operator: str, now: int) -> dict[str, Any]:
        card = self.load_card(record.card_id)
        pop = self.hierarchy.ca(self.population_ca_id)
        context = {"workflow": "renew", "applicant_id": record.applicant_id, "card_id": record.card_id}
        new = []
        for old_cert, profile in ((card.auth_cert, Profile.IDENTITY_AUTH), (card.sign_cert, Profile.SIGNATURE)):
            new.append(
                self.hierarchy.issue_end_entity(
                    pop, record.applicant_id, profile, public_key=old_cert.public_key,
                    scheme_id=old_cert.scheme_id, key_length_bits=old_cert.key_length_bits, now=now,
                    context=context,
                ).certificate
            )
        for ca_id, serial in (record.auth, record.sign):
            self.hierarchy.revoke_certificate(ca_id, serial, RevocationReason.SUPERSEDED, now,
                                              {"workflow": "renew", "card_id": record.card_id})
        card.auth_cert, card.sign_cert = new
        self.save_card(card)
        self._commit(
            {
                "kind": "card.renewed",
                "card_id": record.card_id,
                "applicant_id": record.applicant_id,
                "operator": operator,
                "auth": [new[0].issuer_id, new[0].serial],
                "sign": [new[1].issuer_id, new[1].serial],
            }
        )
        return {"card_id": record.card_id, "new": [[c.issuer_id, c.serial] for c in new],
                "revoked": [list(record.auth), list(record.sign)]}

    def _replace(self, record: CardRecord, operator: str, now: int, new_pin: str) -> dict[str, Any]:
        application = self.applications[record.applicant_id]
        for ca_id, serial in (record.auth, record.sign):
            self.hierarchy.revoke_certificate(ca_id, serial, RevocationReason.CARD_LOST, now,
                                              {"workflow": "replace", "card_id": record.card_id})
        self.gateway.block(record.card_id, BlockMode.PERMANENT, now)
        new_id = self._next_card_id()
        _, auth, signing = self._issue_card(application, new_pin, "replace", new_id)
        self._commit(
            {
                "kind": "card.replaced",
                "card_id": new_id,
                "old_card_id": record.card_id,
                "applicant_id": record.applicant_id,
                "application": application.as_dict(),
                "operator": operator,
                "auth": [auth.issuer_id, auth.serial],
                "sign": [signing.issuer_id, signing.serial],
            }
        )
        return {"card_id": new_id, "old_card_id": record.card_id,
                "revoked": [list(record.auth), list(record.sign)]}

    # -- repository ----------------------------------------------------------

    def repository_fetch(self, serial: int | None = None, ca_id: str | None = None,
                         subject_id: str | None = None) -> list[Certificate]:
        """Stored certificates whose signatures verify, sorted by (serial, issuer)."""
        out = []
        for issuer_id, issued in self.hierarchy.issued.items():
            if ca_id is not None and issuer_id != ca_id:
                continue
            for cert in issued.values():
                if serial is not None and cert.serial != serial:
                    continue
                if subject_id is not None and cert.subject_id != subject_id:
                    continue
                if self._signature_valid(cert):
                    out.append(cert)
        return sorted(out, key=lambda c: (c.serial, c.issuer_id))

    def repository_store(self, cert: Certificate) -> None:
        with self.lock:
            if self.hierarchy.certificate(cert.issuer_id, cert.serial) is not None:
                raise PkiError("duplicate-serial", f"{cert.issuer_id}#{cert.serial}")
            self.hierarchy.record_external_issuance(cert)

    def _signature_valid(self, cert: Certificate) -> bool:
        issuer = self.hierarchy.ca_certificate(cert.issuer_id)
        return issuer is not None and cert.verify_with(issuer.scheme_id, issuer.public_key)

    def ca_lookup(self, subject_id: str) -> Certificate | None:
        return self.hierarchy.ca_certificate(subject_id)

    # -- status products -----------------------------------------------------

    def crl(self, ca_id: str, at_time: int | None = None):
        return self.hierarchy.generate_crl(ca_id, self.clock() if at_time is None else at_time, self.crl_window)

    def all_crls(self, at_time: int | None = None) -> dict[str, Any]:
        return {ca_id: self.crl(ca_id, at_time) for ca_id in sorted(self.hierarchy.cas)}

    def pcl(self, ca_id: str, at_time: int | None = None):
        at_time = self.clock() if at_time is None else at_time
        ledger = self.hierarchy.ledgers.get(ca_id)
        if ledger is None:
            raise PkiError("unknown-ca", ca_id)
        key = (ca_id, ledger.version, len(self.hierarchy.issued[ca_id]), at_time)
        if key not in self._pcl_cache:
            self._pcl_cache = {key: self.hierarchy.generate_pcl(ca_id, at_time)}
        return self._pcl_cache[key]

    def close(self) -> None:
        self.audit.close()


def _subject(event: dict) -> str:
    for key in ("card_id", "ca_id", "applicant_id", "operator_id"):
        if key in event and event[key] is not None:
            value = event[key]
            return f"{value}#{event['serial']}" if "serial" in event else str(value)
    return ""
