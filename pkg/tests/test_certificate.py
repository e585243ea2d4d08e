import itertools
import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eidpki.core import encoding as enc
from eidpki.core.certificate import (
    MANDATORY_FIELDS,
    Certificate,
    Profile,
    canonical_tbs_encode,
    sign_certificate,
)
from eidpki.core.rng import Rng
from eidpki.core.schemes import generate_key_pair
from eidpki.errors import PkiError

KEY = generate_key_pair("test-mac", 2048, Rng(1))
OTHER = generate_key_pair("test-mac", 2048, Rng(2))


def fields(**over):
    base = dict(
        serial=1,
        subject_id="alice",
        issuer_id="root-ca",
        profile=Profile.IDENTITY_AUTH,
        public_key=b"\x01" * 32,
        scheme_id="test-mac",
        key_length_bits=4096,
        not_before=1000,
        not_after=2000,
        policy_id="p",
    )
    base.update(over)
    return base


def test_encoding_layout_matches_length_prefixed_sorted_fields():
    raw = enc.encode_fields({"b": b"2", "a": b"1"})
    assert raw == b"\x00\x00\x00\x01a\x00\x00\x00\x011\x00\x00\x00\x01b\x00\x00\x00\x012"
    assert enc.u64(5) == b"\x00" * 7 + b"\x05"


def test_decode_rejects_unsorted_fields():
    bad = enc.encode_list([b"b", b"2", b"a", b"1"])
    with pytest.raises(PkiError) as err:
        enc.decode_fields(bad)
    assert err.value.code == "encoding-error"


def test_encode_is_deterministic_across_reads():
    cert = sign_certificate(KEY, **fields())
    again = Certificate.from_bytes(cert.to_bytes())
    assert canonical_tbs_encode(cert.tbs_fields()) == canonical_tbs_encode(again.tbs_fields())


def test_encode_injective_on_serial():
    assert canonical_tbs_encode(fields(serial=1)) != canonical_tbs_encode(fields(serial=2))


def _mutate(rnd: random.Random) -> dict:
    name = rnd.choice(MANDATORY_FIELDS + ("role_attributes",))
    f = fields()
    if name in ("serial", "key_length_bits", "not_before"):
        f[name] = rnd.randrange(1, 999)
    elif name == "not_after":
        f[name] = rnd.randrange(1001, 10**9)
    elif name == "public_key":
        f[name] = rnd.randbytes(rnd.randrange(1, 40))
    elif name == "profile":
        f[name] = rnd.choice([p for p in Profile if p is not Profile.ATTRIBUTE])
    elif name == "role_attributes":
        f["profile"] = Profile.ATTRIBUTE
        f[name] = {"role": rnd.randbytes(6).hex()}
    else:
        f[name] = rnd.randbytes(6).hex()
    return f


def test_thousand_random_mutations_pairwise_distinct():
    rnd = random.Random(0)
    inputs = {}
    while len(inputs) < 1000:
        f = _mutate(rnd)
        if f != fields():
            inputs[repr(sorted(f.items()))] = f
    encodings = {canonical_tbs_encode(f) for f in inputs.values()}
    assert len(encodings) == 1000
    assert canonical_tbs_encode(fields()) not in encodings


def test_mutations_of_distinct_records_never_collide():
    records = []
    for serial, subject, nb in itertools.product((1, 2, 300), ("a", "ab", "b"), (1, 10, 999)):
        records.append(fields(serial=serial, subject_id=subject, not_before=nb))
    encodings = {canonical_tbs_encode(r) for r in records}
    assert len(encodings) == len(records)


def test_missing_field_is_encoding_error():
    f = fields()
    del f["policy_id"]
    with pytest.raises(PkiError) as err:
        canonical_tbs_encode(f)
    assert err.value.code == "encoding-error"


def test_self_signed_root_verifies_with_own_key():
    cert = sign_certificate(KEY, **fields(subject_id="root-ca", profile=Profile.CA, public_key=KEY.public_key))
    assert cert.is_self_signed
    assert cert.verify_with("test-mac", KEY.public_key)


def test_wrong_key_rejected():
    cert = sign_certificate(KEY, **fields())
    assert not cert.verify_with("test-mac", OTHER.public_key)


def test_hundred_issuances_verify_with_unique_serials():
    certs = [sign_certificate(KEY, **fields(serial=i, subject_id=f"s{i}")) for i in range(1, 101)]
    assert all(c.verify_with("test-mac", KEY.public_key) for c in certs)
    assert len({c.serial for c in certs}) == 100


@pytest.mark.parametrize(
    "over, code",
    [
        ({"serial": 0}, "request-malformed"),
        ({"not_before": 2000, "not_after": 2000}, "invalid-validity"),
        ({"role_attributes": {"role": "x"}}, "request-malformed"),
        ({"profile": Profile.ATTRIBUTE}, "request-malformed"),
    ],
)
def test_invariants_enforced(over, code):
    with pytest.raises(PkiError) as err:
        Certificate(**fields(**over), signature=b"s")
    assert err.value.code == code


def test_attribute_certificate_round_trip():
    cert = sign_certificate(KEY, **fields(profile=Profile.ATTRIBUTE, role_attributes={"role": "physician"}))
    back = Certificate.from_bytes(cert.to_bytes())
    assert back == cert
    assert back.role_attributes == {"role": "physician"}


def test_validity_inclusive_at_both_ends():
    cert = sign_certificate(KEY, **fields())
    assert cert.valid_at(1000) and cert.valid_at(2000)
    assert not cert.valid_at(999) and not cert.valid_at(2001)


def test_armor_round_trip():
    cert = sign_certificate(KEY, **fields())
    text = cert.armored()
    assert text.startswith("-----BEGIN EIDPKI CERTIFICATE-----")
    assert Certificate.from_armored(text) == cert


def test_non_canonical_bytes_rejected():
    cert = sign_certificate(KEY, **fields())
    chunks = enc.decode_list(cert.to_bytes())
    # swap two field pairs so the order is no longer canonical
    swapped = chunks[2:4] + chunks[0:2] + chunks[4:]
    with pytest.raises(PkiError):
        Certificate.from_bytes(enc.encode_list(swapped))


ids = st.text(alphabet="abcdefghijklmnopqrstuvwxyz-0123456789", min_size=1, max_size=12)


@settings(max_examples=150, deadline=None)
@given(
    serial=st.integers(min_value=1, max_value=2**64 - 1),
    subject=ids,
    issuer=ids,
    profile=st.sampled_from(list(Profile)),
    public_key=st.binary(min_size=1, max_size=64),
    bits=st.integers(min_value=1, max_value=2**16),
    nb=st.integers(min_value=0, max_value=2**40),
    span=st.integers(min_value=1, max_value=2**30),
    roles=st.dictionaries(ids, st.text(max_size=10), min_size=1, max_size=3),
)
def test_round_trip_property(serial, subject, issuer, profile, public_key, bits, nb, span, roles):
    f = fields(serial=serial, subject_id=subject, issuer_id=issuer, profile=profile, public_key=public_key,
               key_length_bits=bits, not_before=nb, not_after=nb + span)
    if profile is Profile.ATTRIBUTE:
        f["role_attributes"] = roles
    cert = sign_certificate(KEY, **f)
    back = Certificate.from_bytes(cert.to_bytes())
    assert back == cert
    assert back.verify_with("test-mac", KEY.public_key)
    assert replace(back, serial=serial) == cert
