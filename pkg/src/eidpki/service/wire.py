"""Line protocol shared by the service, its clients and the CLI.

Request:  ``<op> <canonical JSON object>\\n``
Response: ``ok <canonical JSON object>\\n`` or ``err <canonical JSON object>\\n``

Canonical JSON means sorted keys, no insignificant whitespace, UTF-8.
"""

from __future__ import annotations

import json
import re
from typing import Any

from eidpki.errors import PkiError

MAX_LINE = 1024 * 1024
_OP = re.compile(r"^[a-z][a-z0-9_]*(\.[a-z][a-z0-9_]*)*$")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def encode_request(op: str, params: dict) -> bytes:
    return f"{op} {canonical_json(params)}\n".encode("utf-8")


def parse_request(line: bytes) -> tuple[str, dict]:
    if len(line) > MAX_LINE:
        raise PkiError("too-large", f"request exceeds {MAX_LINE} bytes")
    try:
        text = line.decode("utf-8").rstrip("\n").rstrip("\r")
        op, _, body = text.partition(" ")
        params = json.loads(body) if body else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PkiError("malformed", str(exc)) from None
    if not _OP.match(op) or not isinstance(params, dict):
        raise PkiError("malformed", "expected '<op> <json object>'")
    return op, params


def encode_response(ok: bool, body: dict) -> bytes:
    return f"{'ok' if ok else 'err'} {canonical_json(body)}\n".encode("utf-8")


def error_body(err: PkiError) -> dict:
    return {"code": err.code, "detail": err.detail}


def parse_response(line: bytes) -> dict:
    """Return the body of an ``ok`` response; raise the error of an ``err``."""
    try:
        text = line.decode("utf-8").rstrip("\n")
        status, _, body = text.partition(" ")
        obj = json.loads(body)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PkiError("malformed", f"bad response: {exc}") from None
    if status == "ok":
        return obj
    if status == "err":
        raise PkiError(obj.get("code", "error"), obj.get("detail", ""))
    raise PkiError("malformed", f"bad response status {status!r}")
