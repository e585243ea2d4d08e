import random
from dataclasses import replace

import pytest
from checks import terminal_sam
from conftest import DAY, TEMPLATE, application, build_world, flip_bit

from eidpki.ca.hierarchy import CA_KEY_BITS, USER_KEY_BITS
from eidpki.card import SAM
from eidpki.core.certificate import Certificate, Profile
from eidpki.errors import PkiError
from eidpki.revocation.gateway import GatewayDecision
from eidpki.service.authority import Authority, CardStatus, OperatorCredential
from eidpki.service.enrollment import (
    ApplicationStatus,
    EnrollmentApplication,
    Registry,
    RegistryRecord,
)
from eidpki.toolkit.toolkit import Toolkit


@pytest.fixture
def operator(world):
    return world.authority.issue_operator("alice")


def enroll(world, aid="applicant-1", pin="1234", record=None):
    return world.authority.enroll(application(aid), pin, record)


# -- applications --------------------------------------------------------------

def test_status_transitions():
    app = application("a")
    assert app.status is ApplicationStatus.CAPTURED
    verified = app.advance("verified")
    assert verified.advance("issued").status is ApplicationStatus.ISSUED
    assert app.advance("rejected").status is ApplicationStatus.REJECTED
    assert verified.advance("rejected").status is ApplicationStatus.REJECTED
    for bad in (("captured", "issued"), ("issued", "verified"), ("rejected", "verified")):
        start = replace(app, status=bad[0])
        with pytest.raises(PkiError) as e:
            start.advance(bad[1])
        assert e.value.code == "invalid-transition"


@pytest.mark.parametrize("changes", [
    {"biographic": {"name": "x", "birth_date": "2000-01-01"}},
    {"portrait_hash": bytes(31)},
    {"fingerprints": ()},
    {"fingerprints": (TEMPLATE,) * 11},
])
def test_application_validation(changes):
    base = application("a")
    fields = {"applicant_id": "a", "biographic": base.biographic, "portrait_hash": base.portrait_hash,
              "fingerprints": base.fingerprints, **changes}
    with pytest.raises(PkiError) as e:
        EnrollmentApplication(**fields)
    assert e.value.code == "request-malformed"


def test_application_dict_round_trip():
    app = application("a")
    assert EnrollmentApplication.from_dict(app.as_dict()) == app


def test_registry_rules():
    assert RegistryRecord("a").clears
    assert not RegistryRecord("a", blacklist_hit=True).clears
    assert not RegistryRecord("a", forensic_match=True).clears
    assert RegistryRecord("a", civil_match=False).clears
    assert RegistryRecord("a", True, True, True).rejection_reason() == "blacklist-hit,forensic-match"


def test_registry_fixture(tmp_path):
    path = tmp_path / "fixtures"
    path.write_text('{"bad": {"blacklist_hit": true}, "ok": {}}')
    reg = Registry.from_fixture(path)
    assert not reg.lookup("bad").clears and reg.lookup("ok").clears and reg.lookup("missing").clears
    assert Registry.from_fixture(tmp_path / "absent").records == {}


# -- enrollment ------------------------------------------------------------------

def test_clean_enrollment_round_trip(world):
    result = enroll(world)
    assert result.issued and result.card.card_id == "card-000001"
    auth, signing = result.certificates
    assert (auth.profile, signing.profile) == (Profile.IDENTITY_AUTH, Profile.SIGNATURE)
    assert auth.key_length_bits == signing.key_length_bits == USER_KEY_BITS == 4096
    record = world.toolkit().tk_read_public_data(result.card)
    assert record.biographic == dict(application("applicant-1").biographic)
    assert record.card_id == "card-000001"


def test_enrolled_card_authenticates(world):
    card = enroll(world).card
    sam = terminal_sam(world)
    assert world.toolkit().tk_authenticate(card, sam, "1234", "crl_local", biometric_probe=TEMPLATE).authenticated


@pytest.mark.parametrize("flags", [{"blacklist_hit": True}, {"forensic_match": True}])
def test_rejected_issues_nothing(world, flags):
    before = sum(len(v) for v in world.hierarchy.issued.values())
    result = enroll(world, record=RegistryRecord("applicant-1", **flags))
    assert not result.issued and result.card is None and result.certificates == ()
    assert result.application.status is ApplicationStatus.REJECTED and result.application.reason
    assert sum(len(v) for v in world.hierarchy.issued.values()) == before
    assert world.authority.repository_fetch(subject_id="applicant-1") == []


def test_already_issued(world):
    enroll(world)
    with pytest.raises(PkiError) as e:
        enroll(world)
    assert e.value.code == "already-issued"


def test_application_must_be_captured(world):
    with pytest.raises(PkiError) as e:
        world.authority.enroll(application("a").advance("verified"), "1234")
    assert e.value.code == "invalid-transition"


def test_bad_pin_format(world):
    with pytest.raises(PkiError) as e:
        enroll(world, pin="12ab")
    assert e.value.code == "request-malformed"
    assert world.authority.cards == {}


def test_100_random_applications():
    world = build_world(seed=9)
    r = random.Random(3)
    flags = {}
    for i in range(100):
        aid = f"app-{i:03d}"
        flags[aid] = RegistryRecord(aid, r.random() < 0.9, r.random() < 0.15, r.random() < 0.15)
        world.authority.enroll(application(aid), "1234", flags[aid])
    clean = sum(rec.clears for rec in flags.values())
    issued = [a for a in world.authority.applications.values() if a.status is ApplicationStatus.ISSUED]
    assert len(issued) == clean == len(world.authority.cards)
    pop_leaves = [c for c in world.hierarchy.issued[world.pop_id].values()
                  if c.profile in (Profile.IDENTITY_AUTH, Profile.SIGNATURE)]
    assert len(pop_leaves) == 2 * clean


def test_key_lengths(world):
    for i in range(5):
        enroll(world, f"k{i}")
    for ca in world.hierarchy.cas.values():
        assert ca.ca_certificate.key_length_bits == CA_KEY_BITS == 2048
    for c in world.hierarchy.issued[world.pop_id].values():
        if c.profile in (Profile.IDENTITY_AUTH, Profile.SIGNATURE):
            assert c.key_length_bits == 4096


def test_issuance_linkage(world, operator):
    enroll(world, "a")
    enroll(world, "b")
    world.authority.lifecycle("card-000001", "renew", operator.authorize("card-000001", "renew"))
    world.authority.lifecycle("card-000002", "replace", operator.authorize("card-000002", "replace"), "4321")
    owners = {}
    for record in world.authority.audit.events:
        for event in record.payload:
            if event["kind"] == "cert.issued" and event.get("context", {}).get("workflow") in (
                    "enroll", "renew", "replace"):
                cert = Certificate.from_bytes(bytes.fromhex(event["cert"]))
                key = cert.issuer_id, cert.serial
                assert key not in owners
                owners[key] = record.action
    leaves = [(c.issuer_id, c.serial) for c in world.hierarchy.issued[world.pop_id].values()
              if c.profile in (Profile.IDENTITY_AUTH, Profile.SIGNATURE) and c.subject_id in ("a", "b")]
    assert sorted(leaves) == sorted(owners)
    assert set(owners.values()) == {"enroll", "lifecycle.renew", "lifecycle.replace"}


# -- lifecycle ---------------------------------------------------------------------

def crl_serials(world):
    return set(world.authority.crl(world.pop_id).serials)


def test_replace(world, operator):
    old = enroll(world).card
    result = world.authority.lifecycle(old.card_id, "replace", operator.authorize(old.card_id, "replace"), "4321")
    assert result["old_card_id"] == old.card_id and result["card_id"] == "card-000002"
    assert world.authority.gateway.check(old.card_id, world.clock()) is GatewayDecision.BLOCKED_PERMANENT
    assert old.auth_cert.serial in crl_serials(world)
    assert world.authority.cards[old.card_id].status is CardStatus.REPLACED
    sam = terminal_sam(world)
    tk = world.toolkit()
    assert tk.tk_authenticate(old, sam, "1234", "crl_local").cert_outcome.verdict.value == "revoked"
    new = world.authority.load_card("card-000002")
    assert tk.tk_authenticate(new, sam, "4321", "crl_local").authenticated
    with pytest.raises(PkiError) as e:
        world.authority.lifecycle(old.card_id, "renew", operator.authorize(old.card_id, "renew"))
    assert e.value.code == "card-inactive"


def test_renew_ledger_delta(world, operator):
    card = enroll(world).card
    old = {card.auth_cert.serial, card.sign_cert.serial}
    before_crl = crl_serials(world)
    before_issued = set(world.hierarchy.issued[world.pop_id])
    world.authority.lifecycle(card.card_id, "renew", operator.authorize(card.card_id, "renew"))
    new_serials = set(world.hierarchy.issued[world.pop_id]) - before_issued
    assert len(new_serials) == 2
    assert crl_serials(world) - before_crl == old
    ledger = world.hierarchy.ledgers[world.pop_id]
    assert {ledger.entries[s].reason.value for s in old} == {"superseded"}
    renewed = world.authority.load_card(card.card_id)
    assert {renewed.auth_cert.serial, renewed.sign_cert.serial} == new_serials
    assert world.toolkit().tk_authenticate(renewed, terminal_sam(world), "1234", "crl_local").authenticated


def test_revoke(world, operator):
    card = enroll(world).card
    world.authority.lifecycle(card.card_id, "revoke", operator.authorize(card.card_id, "revoke"))
    ledger = world.hierarchy.ledgers[world.pop_id]
    assert ledger.entries[card.auth_cert.serial].reason.value == "administrative"
    assert world.authority.gateway.check(card.card_id, world.clock()) is GatewayDecision.BLOCKED_PERMANENT
    assert {card.auth_cert.serial, card.sign_cert.serial} <= crl_serials(world)


def test_unlock(world, operator):
    card = enroll(world).card
    sam = terminal_sam(world)
    tk = world.toolkit()
    for _ in range(3):
        tk.tk_authenticate(card, sam, "0000", "crl_local")
    assert card.pin.blocked
    world.authority.lifecycle(card.card_id, "unlock", operator.authorize(card.card_id, "unlock"), "8642")
    assert tk.tk_authenticate(world.authority.load_card(card.card_id), sam, "8642", "crl_local").authenticated


def test_unknown_card(world, operator):
    with pytest.raises(PkiError) as e:
        world.authority.lifecycle("card-999999", "unlock", operator.authorize("card-999999", "unlock"), "1234")
    assert e.value.code == "unknown-card"


def test_forged_operator(world, operator):
    card = enroll(world).card
    auth = operator.authorize(card.card_id, "revoke")
    attempts = [
        replace(auth, signature=flip_bit(auth.signature)),
        operator.authorize(card.card_id, "renew"),
        operator.authorize("card-000002", "revoke"),
        replace(auth, certificate=replace(auth.certificate, subject_id="operator:mallory")),
    ]
    for bad in attempts:
        with pytest.raises(PkiError) as e:
            world.authority.lifecycle(card.card_id, "revoke", bad)
        assert e.value.code == "unauthorized"
    assert world.hierarchy.ledgers[world.pop_id].entries == {}


def test_non_operator_certificate_rejected(world):
    card = enroll(world).card
    _, key = world.authority.document_signer()
    cred = OperatorCredential(world.authority.document_signer()[0], key)
    with pytest.raises(PkiError) as e:
        world.authority.lifecycle(card.card_id, "revoke", cred.authorize(card.card_id, "revoke"))
    assert e.value.code == "unauthorized"


def test_revoked_operator_rejected(world, operator):
    card = enroll(world).card
    world.hierarchy.revoke_certificate(operator.certificate.issuer_id, operator.certificate.serial,
                                       "key_compromise", world.clock())
    with pytest.raises(PkiError) as e:
        world.authority.lifecycle(card.card_id, "revoke", operator.authorize(card.card_id, "revoke"))
    assert e.value.code == "unauthorized"


def test_operator_credential_text_round_trip(operator):
    again = OperatorCredential.from_text(operator.to_text())
    assert again.certificate == operator.certificate and again.key.private_key == operator.key.private_key


def test_duplicate_operator(world, operator):
    with pytest.raises(PkiError) as e:
        world.authority.issue_operator("alice")
    assert e.value.code == "id-conflict"


def test_revocation_linkage(world, operator):
    for i in range(4):
        enroll(world, f"l{i}")
    world.authority.lifecycle("card-000001", "revoke", operator.authorize("card-000001", "revoke"))
    world.authority.lifecycle("card-000002", "replace", operator.authorize("card-000002", "replace"), "1111")
    crl = crl_serials(world)
    for record in world.authority.audit.events:
        if record.action in ("lifecycle.revoke", "lifecycle.replace"):
            revoked = [e["serial"] for e in record.payload if e["kind"] == "cert.revoked"]
            assert len(revoked) == 2 and set(revoked) <= crl


# -- repository ------------------------------------------------------------------

def test_store_then_fetch(world):
    cert = world.external.issue("ext-holder", Profile.IDENTITY_AUTH, bytes(32), "ed25519", world.clock(),
                                world.clock() + DAY, 4096)
    world.authority.repository_store(cert)
    got = world.authority.repository_fetch(serial=cert.serial, ca_id=cert.issuer_id)
    assert [c.to_bytes() for c in got] == [cert.to_bytes()]
    with pytest.raises(PkiError) as e:
        world.authority.repository_store(cert)
    assert e.value.code == "duplicate-serial"


def test_fetch_by_subject_sorted(world):
    result = enroll(world, "three")
    extra = world.hierarchy.issue_end_entity(world.pop_id, "three", Profile.ENCRYPTION, public_key=bytes(32),
                                             scheme_id="x25519", now=world.clock(), escrow=False)
    got = world.authority.repository_fetch(subject_id="three")
    assert len(got) == 3
    assert [c.serial for c in got] == sorted(c.serial for c in (*result.certificates, extra.certificate))


def test_store_rejects_bad_signature(world):
    forged = world.external.issue("x", Profile.IDENTITY_AUTH, bytes(32), "ed25519", world.clock(),
                                  world.clock() + DAY, 4096)
    with pytest.raises(PkiError) as e:
        world.authority.repository_store(replace(forged, signature=flip_bit(forged.signature)))
    assert e.value.code == "bad-signature"
    assert world.authority.repository_fetch(subject_id="x") == []


# -- persistence -----------------------------------------------------------------

def test_state_survives_restart(tmp_path):
    world = build_world(home=tmp_path)
    op = world.authority.issue_operator("bob")
    card = world.authority.enroll(application("p1"), "1234").card
    world.authority.lifecycle(card.card_id, "renew", op.authorize(card.card_id, "renew"))
    world.authority.close()
    again = Authority(tmp_path, seed=1234, clock=world.clock)
    assert again.cards == world.authority.cards
    assert again.applications == world.authority.applications
    assert set(again.hierarchy.issued[again.population_ca_id]) == set(world.hierarchy.issued[world.pop_id])
    loaded = again.load_card(card.card_id)
    assert loaded.auth_cert == world.authority.load_card(card.card_id).auth_cert
    tk = Toolkit(again.hierarchy.anchors(), again.ca_lookup, None, again.all_crls(), clock=world.clock)
    assert tk.tk_authenticate(loaded, SAM("t", {"sm-master-1": again.sm_master_key()}), "1234",
                              "crl_local").authenticated
    assert (tmp_path / "cards" / card.card_id).exists()
    assert (tmp_path / "ca" / again.population_ca_id / "issued").is_dir()
    again.close()


def test_derived_files_rebuilt(tmp_path):
    world = build_world(home=tmp_path)
    world.authority.enroll(application("p1"), "1234")
    world.authority.close()
    junk = tmp_path / "ca" / world.pop_id / "issued" / "999999"
    junk.write_text("leftover from a crash")
    Authority(tmp_path, seed=1234, clock=world.clock).close()
    assert not junk.exists()
    issued = sorted(int(p.name) for p in (tmp_path / "ca" / world.pop_id / "issued").iterdir())
    assert issued == sorted(world.hierarchy.issued[world.pop_id])
