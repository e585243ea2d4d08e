"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import collections
import itertools
import random
import time

import pytest
from checks import EXPECTED_VERDICT, mode_equivalence, run_matrix, terminal_sam
from cli_scenario import GOLDEN, run_scenario
from conftest import TEMPLATE, application, build_world
from crash import describe, run_crash_script
from scenarios import build_scenario, check_snapshot, never_issued
from test_card import LABEL, MASTER, pin_oracle, run_pin_pattern

from eidpki.card import SAM, FingerprintTemplate
from eidpki.core.certificate import Profile
from eidpki.core.rng import Rng
from eidpki.core.schemes import generate_key_pair, get_scheme
from eidpki.errors import PkiError
from eidpki.service.authority import SM_LABEL
from eidpki.toolkit.toolkit import Factor


@pytest.fixture
def report(capsys):
    def emit(name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return emit


def test_tri_agreement(report):
    start = time.perf_counter()
    problems, checked = [], 0
    for seed in range(20):
        sc = build_scenario(seed, n_certs=200)
        probes = never_issued(sc, 100, seed)
        for t in sc.snapshots:
            problems += check_snapshot(sc, t, probes, Rng(seed))
            checked += len(sc.issued) + len(probes)
    elapsed = time.perf_counter() - start
    ok = not problems and elapsed < 30
    report("tri-agreement", ok, f"{checked} status checks, {len(problems)} mismatches, {elapsed:.1f}s (limit 30s)")
    assert not problems, problems[:5]
    assert elapsed < 30


def test_function_matrix(report):
    results = run_matrix(build_world())
    bad = [(name, exp, obs) for name, exp, obs in results if exp != obs]
    report("function matrix", not bad, f"{len(results)} rows, {len(bad)} counter mismatches")
    assert not bad


def test_mode_equivalence(report):
    cases = mode_equivalence(build_world())
    bad = [c for c in cases if c[1] != c[2]]
    wrong = [c for c in cases if c[1] != EXPECTED_VERDICT[c[0].split("/")[-1]]] if cases else []
    report("mode equivalence", len(cases) == 30 and not bad, f"{len(cases)} cases, {len(bad)} mismatches")
    assert len(cases) == 30 and not bad, bad
    assert not wrong, wrong


FAR_PROBE = FingerprintTemplate(((30, 200, 120), (220, 30, 250), (160, 230, 60), (70, 120, 330), (240, 170, 170)), 90)
CORRUPTIONS = ("wrong_sam", "wrong_pin", "biometric", "revoked", "forged_key")


def _attempt(world, sam, r: random.Random, index: int):
    bad = {c for c in CORRUPTIONS if r.random() < 0.2}
    use_biometric = "biometric" in bad or r.random() < 0.5
    mode = r.choice(("crl_local", "ocsp_online"))
    card, _, _ = world.make_card(state="revoked" if "revoked" in bad else "good",
                                 forged_auth_key="forged_key" in bad, card_id=f"attempt-{index:03d}")
    terminal = SAM("rogue", {SM_LABEL: bytes(32)}) if "wrong_sam" in bad else sam
    pin = "9999" if "wrong_pin" in bad else "1234"
    probe = (FAR_PROBE if "biometric" in bad else TEMPLATE) if use_biometric else None
    tk = world.toolkit(services=world.client(), crls=world.authority.all_crls() if mode == "crl_local" else {},
                       rng=Rng(index))
    result = tk.tk_authenticate(card, terminal, pin, mode, biometric_probe=probe)
    return bad, use_biometric, result


def test_three_factor_soundness(report):
    world = build_world(seed=77)
    sam = terminal_sam(world)
    r = random.Random(2024)
    false_accepts, false_rejects, factor_errors = 0, 0, 0
    tally = collections.Counter()
    for i in range(500):
        bad, use_biometric, result = _attempt(world, sam, r, i)
        tally[len(bad)] += 1
        if result.authenticated and bad:
            false_accepts += 1
        if not result.authenticated and not bad:
            false_rejects += 1
        if result.authenticated:
            want = {Factor.POSSESSION, Factor.PIN} | ({Factor.BIOMETRIC} if use_biometric else set())
            factor_errors += result.factors_passed != want
    ok = false_accepts == 0 and false_rejects == 0 and factor_errors == 0
    report("three-factor soundness", ok, f"500 attempts, {tally[0]} clean, {false_accepts} false accepts, "
           f"{false_rejects} false rejects")
    assert ok


def test_pin_automaton(report):
    sam = SAM("terminal-sam", {LABEL: MASTER})
    mismatches = []
    for pattern in itertools.product((True, False), repeat=6):
        want, left = pin_oracle(pattern)
        got, retries, recovered = run_pin_pattern(pattern, sam)
        if got != want or retries != left or not recovered:
            mismatches.append(pattern)
    report("PIN automaton", not mismatches, f"64 patterns, {len(mismatches)} mismatches")
    assert not mismatches


def test_escrow_round_trip(report):
    world = build_world(seed=5)
    h, pop = world.hierarchy, world.pop_id
    x25519 = get_scheme("x25519")
    messages = {}
    for i in range(50):
        issuance = h.issue_end_entity(pop, f"holder-{i}", Profile.ENCRYPTION, escrow=True)
        cert = issuance.certificate
        assert cert.public_key == issuance.key_pair.public_key
        messages[cert.serial] = (f"message {i}".encode(), x25519.encrypt(cert.public_key, f"message {i}".encode()))
        del issuance  # the client's copy of the private key is gone
    restored = 0
    for serial, (plain, ciphertext) in messages.items():
        pair = h.recover_escrowed_key(pop, serial, "escrow-officer")
        restored += x25519.decrypt(pair.private_key, ciphertext) == plain
    plain_key = generate_key_pair("x25519", 4096, Rng(5))
    not_escrowed = [
        h.issue_end_entity(pop, "bring-your-own", Profile.ENCRYPTION, public_key=plain_key.public_key,
                           scheme_id="x25519").certificate.serial,
        world.make_card()[0].sign_cert.serial,
        max(messages) + 1000,
    ]
    refused = 0
    for serial in not_escrowed:
        try:
            h.recover_escrowed_key(pop, serial, "escrow-officer")
        except PkiError as err:
            refused += err.code == "not-escrowed"
    ok = restored == 50 and refused == len(not_escrowed)
    report("escrow round trip", ok, f"{restored}/50 restored, {refused}/{len(not_escrowed)} non-escrowed refused")
    assert ok


def test_crash_consistency(tmp_path, report):
    result = run_crash_script(tmp_path / "home", 1000, 20, seed=31)
    report("crash consistency", result.ok, describe(result))
    assert result.kills == 20
    assert result.ok, result.lost[:5]


def test_key_lengths(report):
    start = time.perf_counter()
    world = build_world(seed=8)
    for i in range(1000):
        assert world.authority.enroll(application(f"A-{i:05d}"), "1234").issued
    elapsed = time.perf_counter() - start
    wrong = []
    for ca in world.hierarchy.cas.values():
        if ca.ca_certificate.key_length_bits != 2048:
            wrong.append(ca.ca_id)
    user = 0
    for certs in world.hierarchy.issued.values():
        for cert in certs.values():
            if cert.profile in (Profile.IDENTITY_AUTH, Profile.SIGNATURE, Profile.ENCRYPTION):
                user += 1
                if cert.key_length_bits != 4096:
                    wrong.append(f"{cert.issuer_id}#{cert.serial}")
            elif cert.profile is Profile.CA and cert.key_length_bits != 2048:
                wrong.append(f"{cert.issuer_id}#{cert.serial}")
    ok = not wrong and user == 2000 and elapsed < 60
    report("key lengths", ok, f"{len(world.hierarchy.cas)} CAs at 2048, {user} user certificates at 4096, "
           f"{len(wrong)} wrong, {elapsed:.1f}s (limit 60s)")
    assert not wrong and user == 2000
    assert elapsed < 60


def test_cli_golden_transcript(tmp_path, report):
    runs = []
    for name in ("first", "second"):
        (tmp_path / name).mkdir()
        runs.append(run_scenario(tmp_path / name))
    same = runs[0] == runs[1]
    golden = runs[0] == GOLDEN.read_text()
    report("CLI golden transcript", same and golden,
           f"two runs {'identical' if same else 'differ'}, {'matches' if golden else 'differs from'} golden file")
    assert same and golden
