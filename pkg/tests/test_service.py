import hashlib
import json
import socket
import threading

import pytest
from conftest import build_world
from crash import CrashReport, describe, run_crash_script, verify_home

from eidpki.core.certificate import Profile
from eidpki.core.rng import Rng
from eidpki.errors import PkiError
from eidpki.revocation.ocsp import OcspRequest
from eidpki.service.client import TcpClient
from eidpki.service.handlers import HANDLERS, MUTATING, handle_line
from eidpki.service.server import ServiceServer
from eidpki.service.wire import (
    MAX_LINE,
    canonical_json,
    encode_request,
    parse_request,
    parse_response,
)


def call(world, op, params):
    return handle_line(world.authority, encode_request(op, params))


def ok(world, op, params):
    return parse_response(call(world, op, params))


# -- wire format -----------------------------------------------------------------

def test_request_round_trip():
    line = encode_request("ocsp.check", {"serial": 5, "ca_id": "x"})
    assert line == b'ocsp.check {"ca_id":"x","serial":5}\n'
    assert parse_request(line) == ("ocsp.check", {"ca_id": "x", "serial": 5})


@pytest.mark.parametrize("line", [b"ocsp.check [1]\n", b"Bad.Op {}\n", b"x {not json\n", b"\xff\xfe {}\n",
                                  b" {}\n"])
def test_malformed_lines(world, line):
    status, _, body = handle_line(world.authority, line).partition(b" ")
    assert status == b"err" and json.loads(body)["code"] == "malformed"


def test_unknown_op(world):
    assert call(world, "foo.bar", {}) == b'err {"code":"unknown-op","detail":"foo.bar"}\n'


def test_too_large_in_parser():
    with pytest.raises(PkiError) as e:
        parse_request(b"x " + b"a" * MAX_LINE)
    assert e.value.code == "too-large"


def test_bad_param_types(world):
    for params in ({"ca_id": 5}, {"ca_id": ""}):
        status, _, body = call(world, "crl.fetch", params).partition(b" ")
        assert status == b"err" and json.loads(body)["code"] == "request-malformed"


def test_every_response_is_one_line(world):
    for op in sorted(HANDLERS):
        line = call(world, op, {})
        assert line.endswith(b"\n") and line.count(b"\n") == 1


# -- handlers ---------------------------------------------------------------------

def test_ocsp_round_trip_fresh_cert(world):
    card, _, _ = world.make_card()
    req = OcspRequest.new(world.pop_id, card.auth_cert.serial, Rng(3))
    body = ok(world, "ocsp.check", req.as_dict())
    assert body["response"]["status"] == "good" and body["response"]["nonce"] == req.nonce.hex()


def test_ocsp_malformed_gets_signed_error(world):
    body = ok(world, "ocsp.check", {"ca_id": world.pop_id, "serial": 1, "nonce": "00"})
    assert body["response"]["error"] == "malformed" and body["response"]["signature"]


def test_crl_and_pcl_fetch(world):
    client = world.client()
    assert client.crl_fetch(world.pop_id).ca_id == world.pop_id
    assert client.pcl_fetch(world.pop_id).ca_id == world.pop_id
    with pytest.raises(PkiError):
        client.pcl_fetch("nope")


def test_gateway_ops(world):
    assert ok(world, "gateway.block", {"card_id": "c", "mode": "permanent"})["mode"] == "permanent"
    assert ok(world, "gateway.check", {"card_id": "c"})["decision"] == "blocked_permanent"
    assert ok(world, "gateway.unblock", {"card_id": "c"})["unblocked"] is True
    assert ok(world, "gateway.unblock", {"card_id": "c"})["unblocked"] is False
    status, _, body = call(world, "gateway.block", {"card_id": "c", "mode": "temporary"}).partition(b" ")
    assert json.loads(body)["code"] == "request-malformed"


def test_tsa_stamp(world):
    token = ok(world, "tsa.stamp", {"document_hash": "ab" * 32})["token"]
    assert token["document_hash"] == "ab" * 32 and token["serial"] == 1


def test_revoke_is_idempotent(world):
    card, _, _ = world.make_card()
    params = {"ca_id": world.pop_id, "serial": card.auth_cert.serial, "reason": "key_compromise"}
    first, second = ok(world, "cert.revoke", params), ok(world, "cert.revoke", params)
    assert first["newly_revoked"] and not second["newly_revoked"]
    assert second["state_version"] == first["state_version"]


def test_issue_never_returns_private_key(world):
    body = ok(world, "cert.issue", {"ca_id": world.pop_id, "subject_id": "enc", "profile": "encryption",
                                    "escrow": True, "scheme_id": "x25519"})
    assert body["escrowed"] is True and set(body) == {"certificate", "escrowed", "state_version"}


def test_validate_unknown_certificate(world):
    body = ok(world, "validate.signature", {"document_hash": "00" * 32, "signature": "00", "ca_id": world.pop_id,
                                            "serial": 999999})
    assert body["outcome"]["verdict"] == "unknown"


def test_repo_store_and_fetch(world):
    cert = world.external.issue("h", Profile.SIGNATURE, bytes(32), "ed25519", world.clock(),
                                world.clock() + 10, 4096)
    ok(world, "repo.store", {"certificate": cert.armored()})
    assert world.client().repo_fetch(subject_id="h") == [cert]
    status, _, body = call(world, "repo.store", {"certificate": cert.armored()}).partition(b" ")
    assert json.loads(body)["code"] == "duplicate-serial"


def test_mutations_append_before_ack(world):
    for op, params in [("gateway.block", {"card_id": "z", "mode": "permanent"}),
                       ("tsa.stamp", {"document_hash": "00" * 32})]:
        before = world.authority.audit.last_sequence
        body = ok(world, op, params)
        assert body["state_version"] == world.authority.audit.last_sequence == before + 1
    assert MUTATING <= set(HANDLERS)


def test_reads_do_not_append(world):
    before = world.authority.audit.last_sequence
    for op, params in [("crl.fetch", {"ca_id": world.pop_id}), ("gateway.check", {"card_id": "c"}),
                       ("repo.fetch", {})]:
        ok(world, op, params)
    assert world.authority.audit.last_sequence == before


def test_wire_determinism():
    lines = []
    for _ in range(2):
        world = build_world(seed=55)
        world.make_card()
        req = encode_request("ocsp.check", {"ca_id": world.pop_id, "serial": 1, "nonce": "00" * 16})
        lines.append([handle_line(world.authority, req), call(world, "crl.fetch", {"ca_id": world.pop_id}),
                      call(world, "pcl.fetch", {"ca_id": world.pop_id})])
    assert lines[0] == lines[1]
    assert json.loads(lines[0][0].partition(b" ")[2])["state_version"] > 0


# -- TCP server -------------------------------------------------------------------

@pytest.fixture
def server(world):
    srv = ServiceServer(world.authority)
    srv.start_background()
    yield srv
    srv.shutdown()
    srv.server_close()


def test_tcp_client(world, server):
    client = TcpClient.from_addr(server.address)
    assert client.gateway_check("nobody") == "allowed"
    with pytest.raises(PkiError) as e:
        client.call("foo.bar", {})
    assert e.value.code == "unknown-op"
    client.close()


def test_tcp_too_large_closes_connection(server):
    host, _, port = server.address.rpartition(":")
    with socket.create_connection((host, int(port)), timeout=10) as sock:
        f = sock.makefile("rb")
        sock.sendall(b"gateway.check " + b"x" * (MAX_LINE + 10) + b"\n")
        assert json.loads(f.readline().partition(b" ")[2])["code"] == "too-large"
        assert f.readline() == b""


def test_tcp_blank_lines_skipped(server):
    host, _, port = server.address.rpartition(":")
    with socket.create_connection((host, int(port)), timeout=10) as sock:
        f = sock.makefile("rb")
        sock.sendall(b"\n\n" + encode_request("gateway.check", {"card_id": "a"}))
        assert f.readline().startswith(b"ok ")


def test_concurrent_clients(world, server):
    errors = []

    def worker(i):
        try:
            c = TcpClient.from_addr(server.address)
            for j in range(20):
                c.tsa_stamp(hashlib.sha256(b"%d-%d" % (i, j)).digest())
            c.close()
        except Exception as exc:  # pragma: no cover - surfaced below
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []
    assert world.authority.tsa.last_serial == 80
    assert world.authority.audit.verify() is None


# -- crash consistency -------------------------------------------------------------

def test_crash_replay_small(tmp_path):
    report = run_crash_script(tmp_path, 150, 3, seed=1)
    assert report.ok, (describe(report), report.lost[:3])
    assert report.kills == 3 and report.acknowledged


def test_crash_checker_detects_loss(tmp_path):
    report = run_crash_script(tmp_path, 40, 1, seed=2)
    assert report.ok
    log = tmp_path / "audit.log"
    lines = log.read_bytes().splitlines(keepends=True)
    log.write_bytes(b"".join(lines[:-3]))
    fresh = CrashReport(acknowledged=report.acknowledged)
    verify_home(tmp_path, fresh)
    assert fresh.lost


def test_canonical_json_is_sorted():
    assert canonical_json({"b": 1, "a": [2, {"d": 3, "c": 4}]}) == '{"a":[2,{"c":4,"d":3}],"b":1}'
