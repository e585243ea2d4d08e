"""Wire operations served by the authority.

Every ``ok`` body carries ``state_version`` (the audit sequence the answer
was computed at), so identical requests against identical state and clock
produce byte-identical responses.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from typing import Any

from eidpki.core.certificate import Certificate, Profile
from eidpki.core.path import ValidationOutcome, Verdict
from eidpki.errors import PkiError
from eidpki.revocation.ocsp import OcspRequest
from eidpki.service.authority import Authority, LedgerOracle
from eidpki.service.wire import encode_response, error_body, parse_request
from eidpki.toolkit.toolkit import verify_signed_hash

log = logging.getLogger(__name__)

Handler = Callable[[Authority, dict], dict]
HANDLERS: dict[str, Handler] = {}
MUTATING = {"gateway.block", "gateway.unblock", "tsa.stamp", "cert.revoke", "cert.issue", "repo.store"}


def op(name: str):
    def register(fn: Handler) -> Handler:
        HANDLERS[name] = fn
        return fn

    return register


def _str(params: dict, key: str) -> str:
    value = params.get(key)
    if not isinstance(value, str) or not value:
        raise PkiError("request-malformed", f"{key} must be a non-empty string")
    return value


def _int(params: dict, key: str, default: int | None = None) -> int:
    value = params.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool):
        raise PkiError("request-malformed", f"{key} must be an integer")
    return value


def _hex(params: dict, key: str) -> bytes:
    try:
        return bytes.fromhex(_str(params, key))
    except ValueError:
        raise PkiError("request-malformed", f"{key} must be hex") from None


def _at(authority: Authority, params: dict) -> int:
    return _int(params, "at_time") if "at_time" in params else authority.clock()


@op("ocsp.check")
def ocsp_check(authority: Authority, params: dict) -> dict:
    # malformed fields still get a signed "malformed" answer rather than an error
    try:
        nonce = bytes.fromhex(params.get("nonce", ""))
    except (TypeError, ValueError):
        nonce = b""
    request = OcspRequest(params.get("ca_id"), params.get("serial"), nonce)
    return {"response": authority.hierarchy.ocsp_respond(request, _at(authority, params)).as_dict()}


@op("crl.fetch")
def crl_fetch(authority: Authority, params: dict) -> dict:
    return {"crl": authority.crl(_str(params, "ca_id"), _at(authority, params)).armored()}


@op("pcl.fetch")
def pcl_fetch(authority: Authority, params: dict) -> dict:
    return {"pcl": authority.pcl(_str(params, "ca_id"), _at(authority, params)).armored()}


@op("gateway.check")
def gateway_check(authority: Authority, params: dict) -> dict:
    return {"decision": authority.gateway.check(_str(params, "card_id"), _at(authority, params)).value}


@op("gateway.block")
def gateway_block(authority: Authority, params: dict) -> dict:
    until = params.get("until")
    if until is not None:
        until = _int(params, "until")
    entry = authority.gateway.block(_str(params, "card_id"), _str(params, "mode"), _at(authority, params), until)
    return {"card_id": entry.card_id, "mode": entry.block.value, "since": entry.since, "until": entry.until}


@op("gateway.unblock")
def gateway_unblock(authority: Authority, params: dict) -> dict:
    return {"unblocked": authority.gateway.unblock(_str(params, "card_id"), _at(authority, params))}


@op("tsa.stamp")
def tsa_stamp(authority: Authority, params: dict) -> dict:
    if authority.tsa is None:
        raise PkiError("unknown-ca", "no timestamp authority configured")
    return {"token": authority.tsa.issue_timestamp(_hex(params, "document_hash")).as_dict()}


@op("cert.revoke")
def cert_revoke(authority: Authority, params: dict) -> dict:
    ack = authority.hierarchy.revoke_certificate(
        _str(params, "ca_id"), _int(params, "serial"), _str(params, "reason"), _at(authority, params)
    )
    return {
        "ca_id": ack.ca_id,
        "serial": ack.serial,
        "reason": ack.reason.value,
        "revoked_at": ack.revoked_at,
        "ledger_version": ack.version,
        "newly_revoked": ack.newly_revoked,
    }


@op("cert.issue")
def cert_issue(authority: Authority, params: dict) -> dict:
    escrow = bool(params.get("escrow", False))
    issuance = authority.hierarchy.issue_end_entity(
        _str(params, "ca_id"),
        _str(params, "subject_id"),
        Profile(_str(params, "profile")),
        public_key=None if escrow else _hex(params, "public_key"),
        scheme_id=params.get("scheme_id"),
        key_length_bits=_int(params, "key_length_bits", 4096),
        escrow=escrow,
        role_attributes=params.get("role_attributes"),
        validity_days=params.get("validity_days"),
        now=_at(authority, params),
    )
    # an escrowed private key is never sent over the wire; recovery is an offline act
    return {"certificate": issuance.certificate.armored(), "escrowed": issuance.escrow is not None}


@op("validate.signature")
def validate_signature(authority: Authority, params: dict) -> dict:
    at_time = _at(authority, params)
    ca_id, serial = _str(params, "ca_id"), _int(params, "serial")
    cert = authority.hierarchy.certificate(ca_id, serial)
    oracle = LedgerOracle(authority.hierarchy)
    if cert is None:
        outcome = ValidationOutcome(Verdict.UNKNOWN, at_time, oracle.source, f"{ca_id}#{serial} not in repository")
    else:
        outcome = verify_signed_hash(
            _hex(params, "document_hash"), _hex(params, "signature"), cert, authority.ca_lookup,
            authority.hierarchy.anchors(), oracle, at_time,
        )
    return {"outcome": outcome.as_dict()}


@op("repo.fetch")
def repo_fetch(authority: Authority, params: dict) -> dict:
    serial = _int(params, "serial") if "serial" in params else None
    ca_id = _str(params, "ca_id") if "ca_id" in params else None
    subject = _str(params, "subject_id") if "subject_id" in params else None
    return {"certificates": [c.armored() for c in authority.repository_fetch(serial, ca_id, subject)]}


@op("repo.store")
def repo_store(authority: Authority, params: dict) -> dict:
    cert = Certificate.from_armored(_str(params, "certificate"))
    authority.repository_store(cert)
    return {"ca_id": cert.issuer_id, "serial": cert.serial}


def dispatch(authority: Authority, op_name: str, params: dict) -> dict[str, Any]:
    handler = HANDLERS.get(op_name)
    if handler is None:
        raise PkiError("unknown-op", op_name)
    with authority.lock:
        body = handler(authority, params)
        body["state_version"] = authority.state_version
    return body


def handle_line(authority: Authority, line: bytes) -> bytes:
    try:
        op_name, params = parse_request(line)
        return encode_response(True, dispatch(authority, op_name, params))
    except PkiError as err:
        return encode_response(False, error_body(err))
    except (ValueError, KeyError, TypeError) as exc:
        return encode_response(False, {"code": "request-malformed", "detail": str(exc)})
    except Exception as exc:  # noqa: BLE001 - the server must answer every line
        log.exception("handler failed")
        return encode_response(False, {"code": "internal", "detail": type(exc).__name__})
