"""Operator command line.

Exit codes: 0 success, 1 domain error or negative outcome, 2 usage error.
State lives in ``$EIDPKI_HOME``; commands that talk to the central services
use ``$EIDPKI_ADDR`` when set and an in-process service otherwise.
``EIDPKI_SEED`` and ``EIDPKI_CLOCK`` pin randomness and time for scripted runs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import signal
import sys
import time
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any

from eidpki.card import FingerprintTemplate
from eidpki.errors import PkiError
from eidpki.revocation.lists import CRL
from eidpki.revocation.tsa import verify_timestamp
from eidpki.service.authority import Authority, OperatorCredential
from eidpki.service.client import LocalClient, ServiceClient, TcpClient
from eidpki.service.enrollment import EnrollmentApplication
from eidpki.service.handlers import handle_line
from eidpki.service.server import ServiceServer
from eidpki.service.wire import canonical_json
from eidpki.toolkit import SignedDocument, Toolkit

log = logging.getLogger("eidpki.cli")


@dataclass
class Result:
    body: dict[str, Any]
    exit_code: int = 0
    raw: str | None = None  # printed verbatim instead of the body in text mode


class UsageError(Exception):
    pass


@dataclass
class Context:
    home: Path
    seed: int | None
    clock_value: int | None
    addr: str | None
    label: str
    _authority: Authority | None = None
    _services: ServiceClient | None = None
    _writable: bool = field(default=False)

    def clock(self) -> int:
        return self.clock_value if self.clock_value is not None else int(time.time())

    def authority(self, write: bool = False) -> Authority:
        if self._authority is not None and write and not self._writable:
            self._authority.close()
            self._authority = None
        if self._authority is None:
            self._authority = Authority(
                self.home, seed=self.seed, clock=self.clock, actor="cli", rng_label=self.label,
                read_only=not write,
            )
            self._writable = write
        return self._authority

    def services(self, write: bool = False) -> ServiceClient:
        if self._services is None:
            if self.addr:
                self._services = TcpClient.from_addr(self.addr)
            else:
                self._services = LocalClient(partial(handle_line, self.authority(write)))
        return self._services

    def close(self) -> None:
        if isinstance(self._services, TcpClient):
            self._services.close()
        if self._authority is not None:
            self._authority.close()


def _read_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise PkiError("request-malformed", f"{path}: {exc}") from None


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None


def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None


def _write(path: str, text: str) -> None:
    Path(path).write_text(text)


# -- ca ----------------------------------------------------------------------


def cmd_ca_init_root(ctx: Context, args) -> Result:
    a = ctx.authority(write=True)
    root = a.init_root(args.ca_id, args.scheme)
    cert = root.ca_certificate
    return Result({"ca_id": root.ca_id, "serial": cert.serial, "key_length_bits": cert.key_length_bits,
                   "tsa": a.tsa.cert.subject_id})


def cmd_ca_init_population(ctx: Context, args) -> Result:
    a = ctx.authority(write=True)
    pop = a.init_population(args.ca_id)
    cert = pop.ca_certificate
    return Result({"ca_id": pop.ca_id, "issuer_id": cert.issuer_id, "serial": cert.serial,
                   "key_length_bits": cert.key_length_bits})


def cmd_ca_certify_sub(ctx: Context, args) -> Result:
    a = ctx.authority(write=True)
    try:
        public_key = bytes.fromhex(_read_text(args.public_key_file).strip())
    except ValueError:
        raise PkiError("request-malformed", "public key file must hold hex") from None
    cert = a.hierarchy.certify_external_sub_ca(a._root(), args.ca_id, public_key, args.scheme,
                                               key_length_bits=args.key_length_bits)
    if args.out:
        _write(args.out, cert.armored())
    return Result({"ca_id": cert.subject_id, "issuer_id": cert.issuer_id, "serial": cert.serial})


def cmd_ca_provision_sub(ctx: Context, args) -> Result:
    a = ctx.authority(write=True)
    ca = a.hierarchy.provision_virtual_sub_ca(args.population or a.population_ca_id, args.ca_id,
                                              signed_by=args.signed_by)
    return Result({"ca_id": ca.ca_id, "issuer_id": ca.parent_ca_id, "serial": ca.ca_certificate.serial,
                   "host_id": ca.host_id})


def cmd_ca_issue_operator(ctx: Context, args) -> Result:
    cred = ctx.authority(write=True).issue_operator(args.operator_id)
    _write(args.out, cred.to_text())
    return Result({"operator_id": args.operator_id, "serial": cred.certificate.serial,
                   "issuer_id": cred.certificate.issuer_id})


# -- enrollment and lifecycle --------------------------------------------------


def _load_application(path: str) -> EnrollmentApplication:
    d = _read_json(path)
    if not isinstance(d, dict):
        raise PkiError("request-malformed", "application must be a JSON object")
    d = dict(d)
    if "portrait" in d and "portrait_hash" not in d:
        portrait = Path(path).parent / d.pop("portrait")
        d["portrait_hash"] = hashlib.sha256(_read_bytes(str(portrait))).hexdigest()
    try:
        return EnrollmentApplication.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise PkiError("request-malformed", f"application: {exc}") from None


def cmd_enroll(ctx: Context, args) -> Result:
    application = _load_application(args.application)
    result = ctx.authority(write=True).enroll(application, args.pin)
    body: dict[str, Any] = {"applicant_id": application.applicant_id, "status": result.application.status.value}
    if result.issued:
        body["card_id"] = result.card.card_id
        body["certificates"] = [[c.issuer_id, c.serial, c.profile.value, c.key_length_bits]
                                for c in result.certificates]
        return Result(body)
    body["reason"] = result.application.reason
    return Result(body, 1)


def cmd_lifecycle(ctx: Context, args) -> Result:
    cred = OperatorCredential.from_text(_read_text(args.operator))
    auth = cred.authorize(args.card, args.action)
    ack = ctx.authority(write=True).lifecycle(args.card, args.action, auth, new_pin=args.new_pin)
    return Result({"action": args.action, **ack})


def cmd_revoke(ctx: Context, args) -> Result:
    if args.card:
        record = ctx.authority().cards.get(args.card)
        if record is None:
            raise PkiError("unknown-card", args.card)
        ca_id, serial = record.auth if args.key == "auth" else record.sign
    elif args.ca and args.serial is not None:
        ca_id, serial = args.ca, args.serial
    else:
        raise UsageError("give --card (with --key) or --ca and --serial")
    body = ctx.services(write=True).call(
        "cert.revoke", {"ca_id": ca_id, "serial": serial, "reason": args.reason, "at_time": ctx.clock()}
    )
    body.pop("state_version", None)
    return Result(body)


# -- status lists ------------------------------------------------------------


def _status_list(ctx: Context, args, kind: str) -> Result:
    a = ctx.authority()
    at = args.at if args.at is not None else ctx.clock()
    product = a.crl(args.ca, at) if kind == "crl" else a.pcl(args.ca, at)
    text = product.armored()
    if args.out:
        _write(args.out, text)
    body = {"ca_id": product.ca_id, "signer_id": product.signer_id, "version": product.version}
    if kind == "crl":
        body.update(this_update=product.this_update, next_update=product.next_update,
                    revoked=len(product.entries))
    else:
        body.update(as_of=product.as_of, valid=len(product.valid_serials))
    return Result(body, raw=None if args.out else text)


def cmd_crl_gen(ctx: Context, args) -> Result:
    return _status_list(ctx, args, "crl")


def cmd_pcl_gen(ctx: Context, args) -> Result:
    return _status_list(ctx, args, "pcl")


# -- card --------------------------------------------------------------------


def _toolkit(ctx: Context, crl_files: list[str] | None = None, crl_mode: bool = True, online: bool = False,
             write: bool = False) -> Toolkit:
    a = ctx.authority(write)
    services = ctx.services(write) if online else None
    crls: dict[str, CRL] = {}
    for path in crl_files or []:
        crl = CRL.from_armored(_read_text(path))
        crls[crl.ca_id] = crl
    if crl_mode:
        # anything not supplied on the command line is downloaded fresh
        fetcher = ctx.services(write)
        for ca_id in sorted(a.hierarchy.cas):
            if ca_id not in crls:
                crls[ca_id] = fetcher.crl_fetch(ca_id)
    return Toolkit(a.hierarchy.anchors(), a.ca_lookup, services, crls, a.rng, ctx.clock)


def _probe(path: str | None) -> FingerprintTemplate | None:
    if path is None:
        return None
    try:
        return FingerprintTemplate.from_dict(_read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise PkiError("request-malformed", f"probe: {exc}") from None


_MODES = {"ocsp": "ocsp_online", "crl": "crl_local"}


def cmd_card_read(ctx: Context, args) -> Result:
    a = ctx.authority()
    card = a.load_card(args.card)
    record = Toolkit(a.hierarchy.anchors(), a.ca_lookup, clock=ctx.clock).tk_read_public_data(card)
    return Result({"card_id": record.card_id, "biographic": record.biographic,
                   "portrait_hash": record.portrait_hash.hex()})


def cmd_card_auth(ctx: Context, args) -> Result:
    online = args.mode == "ocsp"
    tk = _toolkit(ctx, args.crl, crl_mode=not online, online=online)
    a = ctx.authority()
    card = a.load_card(args.card)
    try:
        result = tk.tk_authenticate(card, a.issuer_sam(), args.pin, _MODES[args.mode],
                                    biometric_probe=_probe(args.probe))
    finally:
        a.save_card(card)
    body = {
        "card_id": args.card,
        "outcome": result.outcome,
        "factors": sorted(f.value for f in result.factors_passed),
        "verdict": result.cert_outcome.verdict.value if result.cert_outcome else None,
    }
    return Result(body, 0 if result.authenticated else 1)


def cmd_card_sign(ctx: Context, args) -> Result:
    online = args.mode == "ocsp" or args.timestamp
    tk = _toolkit(ctx, args.crl, crl_mode=args.mode == "crl", online=online,
                  write=args.timestamp and not ctx.addr)
    a = ctx.authority(write=args.timestamp and not ctx.addr)
    card = a.load_card(args.card)
    try:
        doc = tk.tk_sign(card, a.issuer_sam(), args.pin, _read_bytes(args.input), args.timestamp,
                         _MODES[args.mode])
    finally:
        a.save_card(card)
    _write(args.out, canonical_json(doc.as_dict()) + "\n")
    body = {"document_hash": doc.document_hash.hex(), "signer": [doc.signer_ca_id, doc.signer_cert_serial],
            "timestamp_serial": doc.timestamp_token.serial if doc.timestamp_token else None}
    return Result(body)


def cmd_card_verify(ctx: Context, args) -> Result:
    doc = SignedDocument.from_dict(_read_json(args.signed))
    outsourced = args.mode == "outsourced"
    tk = _toolkit(ctx, args.crl, crl_mode=not outsourced, online=outsourced)
    outcome = tk.tk_verify_signature(doc, args.mode)
    body = {"verdict": outcome.verdict.value, "revocation_source": outcome.revocation_source.value,
            "signer": [doc.signer_ca_id, doc.signer_cert_serial]}
    if outcome.detail:
        body["detail"] = outcome.detail
    if doc.timestamp_token is not None:
        tsa = ctx.authority().tsa
        body["timestamp"] = bool(tsa and verify_timestamp(doc.timestamp_token, tsa.cert)
                                 and doc.timestamp_token.document_hash == doc.document_hash)
    return Result(body, 0 if outcome.valid else 1)


def cmd_card_match(ctx: Context, args) -> Result:
    a = ctx.authority()
    card = a.load_card(args.card)
    tk = Toolkit(a.hierarchy.anchors(), a.ca_lookup, rng=a.rng, clock=ctx.clock)
    probe = _probe(args.probe)
    if args.where == "on-card":
        matched = tk.tk_match_on_card(card, a.issuer_sam(), probe)
    else:
        matched = tk.tk_match_off_card(card, a.issuer_sam(), probe)
    return Result({"card_id": args.card, "where": args.where, "matched": matched}, 0 if matched else 1)


# -- services ----------------------------------------------------------------


def _wire(ctx: Context, op: str, params: dict, write: bool = False) -> dict:
    body = ctx.services(write).call(op, params)
    body.pop("state_version", None)
    return body


def cmd_gateway_block(ctx: Context, args) -> Result:
    params = {"card_id": args.card, "mode": args.mode, "at_time": ctx.clock()}
    if args.until is not None:
        params["until"] = args.until
    return Result(_wire(ctx, "gateway.block", params, write=True))


def cmd_gateway_unblock(ctx: Context, args) -> Result:
    return Result(_wire(ctx, "gateway.unblock", {"card_id": args.card, "at_time": ctx.clock()}, write=True))


def cmd_gateway_check(ctx: Context, args) -> Result:
    body = _wire(ctx, "gateway.check", {"card_id": args.card, "at_time": ctx.clock()})
    return Result({"card_id": args.card, **body}, 0 if body["decision"] == "allowed" else 1)


def cmd_tsa_stamp(ctx: Context, args) -> Result:
    if args.input:
        digest = hashlib.sha256(_read_bytes(args.input)).hexdigest()
    elif args.hash:
        digest = args.hash
    else:
        raise UsageError("give --in or --hash")
    body = _wire(ctx, "tsa.stamp", {"document_hash": digest}, write=True)
    if args.out:
        _write(args.out, canonical_json(body["token"]) + "\n")
    return Result(body["token"])


def cmd_serve(ctx: Context, args) -> Result:
    host, _, port = args.listen.rpartition(":")
    authority = ctx.authority(write=True)
    server = ServiceServer(authority, host or "127.0.0.1", int(port))
    signal.signal(signal.SIGTERM, lambda *_: (_ for _ in ()).throw(KeyboardInterrupt()))
    print(f"listening {server.address}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return Result({"stopped": True})


# -- plumbing ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eidpki", description="eID PKI operator tool")
    p.add_argument("--home", default=os.environ.get("EIDPKI_HOME", "eidpki-home"), help="state directory")
    p.add_argument("--addr", default=os.environ.get("EIDPKI_ADDR"), help="service address host:port")
    p.add_argument("--output", choices=("text", "canonical"), default="text")
    p.add_argument("--seed", type=int, default=_env_int("EIDPKI_SEED"))
    p.add_argument("--clock", type=int, default=_env_int("EIDPKI_CLOCK"), help="fixed current time")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    ca = sub.add_parser("ca").add_subparsers(dest="ca_command", required=True)
    c = ca.add_parser("init-root")
    c.add_argument("--ca-id", default="root-ca")
    c.add_argument("--scheme", default="ed25519")
    c.set_defaults(func=cmd_ca_init_root)
    c = ca.add_parser("init-population")
    c.add_argument("--ca-id", default="population-ca")
    c.set_defaults(func=cmd_ca_init_population)
    c = ca.add_parser("certify-sub", help="certify an externally operated sub-CA (option 1)")
    c.add_argument("--ca-id", required=True)
    c.add_argument("--public-key-file", required=True)
    c.add_argument("--scheme", default="ed25519")
    c.add_argument("--key-length-bits", type=int, default=2048)
    c.add_argument("--out")
    c.set_defaults(func=cmd_ca_certify_sub)
    c = ca.add_parser("provision-sub", help="provision a hosted virtual sub-CA (option 2)")
    c.add_argument("--ca-id", required=True)
    c.add_argument("--population")
    c.add_argument("--signed-by", choices=("population", "root"), default="population")
    c.set_defaults(func=cmd_ca_provision_sub)
    c = ca.add_parser("issue-operator")
    c.add_argument("--operator-id", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_ca_issue_operator)

    c = sub.add_parser("enroll")
    c.add_argument("--application", required=True)
    c.add_argument("--pin", required=True)
    c.set_defaults(func=cmd_enroll)

    card = sub.add_parser("card").add_subparsers(dest="card_command", required=True)
    c = card.add_parser("read")
    c.add_argument("--card", required=True)
    c.set_defaults(func=cmd_card_read)
    c = card.add_parser("auth")
    c.add_argument("--card", required=True)
    c.add_argument("--pin", required=True)
    c.add_argument("--mode", choices=("ocsp", "crl"), default="ocsp")
    c.add_argument("--crl", action="append", help="locally held CRL file (repeatable)")
    c.add_argument("--probe", help="live fingerprint template JSON")
    c.set_defaults(func=cmd_card_auth)
    c = card.add_parser("sign")
    c.add_argument("--card", required=True)
    c.add_argument("--pin", required=True)
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--timestamp", action="store_true")
    c.add_argument("--mode", choices=("ocsp", "crl"), default="crl")
    c.add_argument("--crl", action="append")
    c.set_defaults(func=cmd_card_sign)
    c = card.add_parser("verify")
    c.add_argument("--signed", required=True)
    c.add_argument("--mode", choices=("local", "outsourced"), default="local")
    c.add_argument("--crl", action="append")
    c.set_defaults(func=cmd_card_verify)
    c = card.add_parser("match")
    c.add_argument("--card", required=True)
    c.add_argument("--probe", required=True)
    c.add_argument("--where", choices=("on-card", "off-card"), default="on-card")
    c.set_defaults(func=cmd_card_match)

    c = sub.add_parser("revoke")
    c.add_argument("--ca")
    c.add_argument("--serial", type=int)
    c.add_argument("--card")
    c.add_argument("--key", choices=("auth", "sign"), default="auth")
    c.add_argument("--reason", default="key_compromise")
    c.set_defaults(func=cmd_revoke)

    c = sub.add_parser("lifecycle")
    c.add_argument("--card", required=True)
    c.add_argument("--action", choices=("renew", "replace", "revoke", "unlock"), required=True)
    c.add_argument("--operator", required=True, help="operator credential file")
    c.add_argument("--new-pin")
    c.set_defaults(func=cmd_lifecycle)

    for name, func in (("crl", cmd_crl_gen), ("pcl", cmd_pcl_gen)):
        g = sub.add_parser(name).add_subparsers(dest=f"{name}_command", required=True)
        c = g.add_parser("gen")
        c.add_argument("--ca", required=True)
        c.add_argument("--out")
        c.add_argument("--at", type=int, help="generation time (defaults to now)")
        c.set_defaults(func=func)

    c = sub.add_parser("serve")
    c.add_argument("--listen", default="127.0.0.1:0")
    c.set_defaults(func=cmd_serve)

    gw = sub.add_parser("gateway").add_subparsers(dest="gateway_command", required=True)
    c = gw.add_parser("block")
    c.add_argument("--card", required=True)
    c.add_argument("--mode", choices=("temporary", "permanent"), default="temporary")
    c.add_argument("--until", type=int)
    c.set_defaults(func=cmd_gateway_block)
    c = gw.add_parser("unblock")
    c.add_argument("--card", required=True)
    c.set_defaults(func=cmd_gateway_unblock)
    c = gw.add_parser("check")
    c.add_argument("--card", required=True)
    c.set_defaults(func=cmd_gateway_check)

    tsa = sub.add_parser("tsa").add_subparsers(dest="tsa_command", required=True)
    c = tsa.add_parser("stamp")
    c.add_argument("--in", dest="input")
    c.add_argument("--hash")
    c.add_argument("--out")
    c.set_defaults(func=cmd_tsa_stamp)
    return p


def _env_int(name: str) -> int | None:
    value = os.environ.get(name)
    if value is None or value == "":
        return None
    try:
        return int(value)
    except ValueError:
        return None


def _emit(result: Result, output: str) -> None:
    if output == "canonical":
        print(canonical_json(result.body))
    elif result.raw is not None:
        sys.stdout.write(result.raw)
    else:
        for key in sorted(result.body):
            value = result.body[key]
            plain = isinstance(value, (str, int)) and not isinstance(value, bool)
            print(f"{key}: {value if plain else canonical_json(value)}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    label = " ".join(str(v) for k, v in sorted(vars(args).items()) if k.endswith("command"))
    ctx = Context(Path(args.home), args.seed, args.clock, args.addr, label)
    try:
        result = args.func(ctx, args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"eidpki: error: {exc}", file=sys.stderr)
        return 2
    except PkiError as err:
        if args.output == "canonical":
            print(canonical_json({"error": {"code": err.code, "detail": err.detail}}), file=sys.stderr)
        else:
            print(f"error: {err.code}: {err.detail}" if err.detail else f"error: {err.code}", file=sys.stderr)
        return 1
    finally:
        ctx.close()
    _emit(result, args.output)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
