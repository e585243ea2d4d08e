"""Canonical length-prefixed record encoding.

Every record is a sequence of ``(name, value)`` pairs ordered by name.  Each
name and each value is written as a 4-byte big-endian length followed by the
raw bytes.  Integers are 8-byte big-endian, enums are their lowercase name,
strings are UTF-8 and nested maps or lists are themselves encoded records.
The format is byte-exact so that signatures over it are reproducible.
"""

from __future__ import annotations

import struct
import textwrap
from collections.abc import Iterable, Mapping

from eidpki.errors import PkiError

_LEN = struct.Struct(">I")
_U64 = struct.Struct(">Q")


def _frame(chunk: bytes) -> bytes:
    return _LEN.pack(len(chunk)) + chunk


def u64(value: int) -> bytes:
    if not 0 <= value < 2**64:
        raise PkiError("encoding-error", f"integer out of range: {value}")
    return _U64.pack(value)


def from_u64(raw: bytes) -> int:
    if len(raw) != 8:
        raise PkiError("encoding-error", "integer field must be 8 bytes")
    return _U64.unpack(raw)[0]


def text(value: str) -> bytes:
    return value.encode("utf-8")


def from_text(raw: bytes) -> str:
    return raw.decode("utf-8")


def flag(value: bool) -> bytes:
    return b"\x01" if value else b"\x00"


def from_flag(raw: bytes) -> bool:
    if raw not in (b"\x00", b"\x01"):
        raise PkiError("encoding-error", "boolean field must be 0x00 or 0x01")
    return raw == b"\x01"


def encode_fields(fields: Mapping[str, bytes]) -> bytes:
    out = bytearray()
    for name in sorted(fields):
        out += _frame(name.encode("utf-8"))
        out += _frame(fields[name])
    return bytes(out)


def _chunks(data: bytes) -> Iterable[bytes]:
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise PkiError("encoding-error", "truncated length prefix")
        (size,) = _LEN.unpack_from(data, pos)
        pos += 4
        if pos + size > len(data):
            raise PkiError("encoding-error", "truncated value")
        yield data[pos : pos + size]
        pos += size


def decode_fields(data: bytes) -> dict[str, bytes]:
    chunks = list(_chunks(data))
    if len(chunks) % 2:
        raise PkiError("encoding-error", "dangling field name")
    fields: dict[str, bytes] = {}
    previous = None
    for i in range(0, len(chunks), 2):
        name = chunks[i].decode("utf-8")
        if previous is not None and name <= previous:
            raise PkiError("encoding-error", "fields not in canonical order")
        previous = name
        fields[name] = chunks[i + 1]
    return fields


def encode_str_map(mapping: Mapping[str, str]) -> bytes:
    return encode_fields({k: text(v) for k, v in mapping.items()})


def decode_str_map(raw: bytes) -> dict[str, str]:
    return {k: from_text(v) for k, v in decode_fields(raw).items()}


def encode_list(items: Iterable[bytes]) -> bytes:
    return b"".join(_frame(item) for item in items)


def decode_list(raw: bytes) -> list[bytes]:
    return list(_chunks(raw))


def require(fields: Mapping[str, bytes], *names: str) -> None:
    missing = [n for n in names if n not in fields]
    if missing:
        raise PkiError("encoding-error", f"missing field(s): {', '.join(missing)}")


def armor(label: str, data: bytes) -> str:
    """Hex armor for embedding binary records in text files."""
    body = "\n".join(textwrap.wrap(data.hex(), 64)) if data else ""
    return f"-----BEGIN {label}-----\n{body}\n-----END {label}-----\n"


def dearmor(label: str, armored: str) -> bytes:
    lines = [ln.strip() for ln in armored.strip().splitlines()]
    if not lines or lines[0] != f"-----BEGIN {label}-----" or lines[-1] != f"-----END {label}-----":
        raise PkiError("encoding-error", f"not a {label} armor block")
    try:
        return bytes.fromhex("".join(lines[1:-1]))
    except ValueError as exc:
        raise PkiError("encoding-error", "bad hex in armor") from exc
