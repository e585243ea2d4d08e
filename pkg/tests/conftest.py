"""Shared fixtures: a seeded in-memory authority with both sub-CA options."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from functools import partial

import pytest

from eidpki.ca import ExternalSubCA
from eidpki.card import Card, FingerprintTemplate
from eidpki.core import encoding as enc
from eidpki.core.certificate import Certificate, Profile
from eidpki.core.rng import Rng
from eidpki.core.schemes import KeyPair, generate_key_pair
from eidpki.service.authority import SM_LABEL, Authority
from eidpki.service.client import LocalClient
from eidpki.service.enrollment import EnrollmentApplication
from eidpki.service.handlers import handle_line
from eidpki.toolkit import Toolkit

T0 = 1_800_000_000
DAY = 86400
ROUTES = ("direct", "option1", "option2")
LEAF_STATES = ("good", "revoked", "expired", "not_yet_valid", "bad_signature")

TEMPLATE = FingerprintTemplate(((10, 10, 30), (50, 60, 90), (100, 20, 200), (120, 140, 10), (200, 90, 300)), 90)


class Clock:
    def __init__(self, t: int = T0) -> None:
        self.t = t

    def __call__(self) -> int:
        return self.t

    def advance(self, seconds: int) -> None:
        self.t += seconds


def flip_bit(data: bytes, bit: int = 0) -> bytes:
    out = bytearray(data)
    out[(bit // 8) % len(out)] ^= 1 << (bit % 8)
    return bytes(out)


def application(applicant_id: str, template: FingerprintTemplate = TEMPLATE) -> EnrollmentApplication:
    return EnrollmentApplication(
        applicant_id,
        {"name": f"Holder {applicant_id}", "birth_date": "1990-01-01", "nationality": "AE"},
        hashlib.sha256(applicant_id.encode()).digest(),
        (template,),
    )


@dataclass
class World:
    authority: Authority
    clock: Clock
    external: ExternalSubCA
    virtual_ca_id: str = "health-ca"

    @property
    def hierarchy(self):
        return self.authority.hierarchy

    @property
    def pop_id(self) -> str:
        return self.authority.population_ca_id

    def client(self) -> LocalClient:
        return LocalClient(partial(handle_line, self.authority))

    def toolkit(self, services=None, crls=None, rng: Rng | None = None) -> Toolkit:
        crls = self.authority.all_crls() if crls is None else crls
        return Toolkit(self.hierarchy.anchors(), self.authority.ca_lookup, services, crls,
                       rng or Rng(99), self.clock)

    def issuing_ca(self, route: str) -> str:
        return {"direct": self.pop_id, "option1": self.external.ca_id, "option2": self.virtual_ca_id}[route]

    def issue(self, route: str, subject: str, profile: Profile, public_key: bytes, scheme_id: str,
              not_before: int, days: int, key_length_bits: int = 4096) -> Certificate:
        if route == "option1":
            cert = self.external.issue(subject, profile, public_key, scheme_id, not_before,
                                       not_before + days * DAY, key_length_bits)
            self.hierarchy.record_external_issuance(cert)
            return cert
        return self.hierarchy.issue_end_entity(
            self.issuing_ca(route), subject, profile, public_key=public_key, scheme_id=scheme_id,
            key_length_bits=key_length_bits, not_before=not_before, validity_days=days, now=self.clock(),
        ).certificate

    def leaf_window(self, state: str) -> tuple[int, int]:
        now = self.clock()
        if state == "expired":
            return now - 30 * DAY, 10
        if state == "not_yet_valid":
            return now + 10 * DAY, 365
        return now - DAY, 365

    def make_card(self, route: str = "direct", state: str = "good", sign_state: str = "good",
                  pin: str = "1234", template: FingerprintTemplate = TEMPLATE, card_id: str | None = None,
                  forged_auth_key: bool = False) -> tuple[Card, KeyPair, KeyPair]:
        """A card whose auth certificate is in ``state`` and signature certificate in ``sign_state``."""
        rng = self.hierarchy.rng
        scheme = self.hierarchy.ca(self.issuing_ca(route)).ca_certificate.scheme_id
        auth_pair = generate_key_pair(scheme, 4096, rng)
        sign_pair = generate_key_pair(scheme, 4096, rng)
        subject = card_id or f"holder-{len(self.authority.hierarchy.issued[self.issuing_ca(route)]) + 1}"
        certs = []
        for pair, profile, st in ((auth_pair, Profile.IDENTITY_AUTH, state), (sign_pair, Profile.SIGNATURE, sign_state)):
            nb, days = self.leaf_window(st)
            cert = self.issue(route, subject, profile, pair.public_key, scheme, nb, days)
            if st == "revoked":
                self.hierarchy.revoke_certificate(cert.issuer_id, cert.serial, "key_compromise", self.clock())
            if st == "bad_signature":
                cert = replace(cert, signature=flip_bit(cert.signature, 5))
            certs.append(cert)
        signer_cert, signer_key = self.authority.document_signer()
        card_auth_pair = generate_key_pair(scheme, 4096, rng) if forged_auth_key else auth_pair
        card = Card.personalize(
            card_id or f"card-{subject}",
            {"biographic": _biographic(subject), "portrait_hash": hashlib.sha256(subject.encode()).digest()},
            signer_key, signer_cert, card_auth_pair, certs[0], sign_pair, certs[1], pin, template,
            SM_LABEL, self.authority.sm_master_key(), rng=rng,
        )
        return card, auth_pair, sign_pair


def _biographic(subject: str) -> bytes:
    return enc.encode_str_map({"name": subject, "birth_date": "1990-01-01", "nationality": "AE"})


def build_world(seed: int = 1234, home=None) -> World:
    clock = Clock()
    authority = Authority(home, seed=seed, clock=clock)
    authority.init_root()
    authority.init_population()
    external = ExternalSubCA("egov-ca", rng=Rng(seed + 1))
    external.enroll_with(authority.hierarchy, now=clock())
    authority.hierarchy.provision_virtual_sub_ca(authority.population_ca_id, "health-ca", now=clock())
    return World(authority, clock, external)


@pytest.fixture
def clock() -> Clock:
    return Clock()


@pytest.fixture
def world() -> World:
    return build_world()
