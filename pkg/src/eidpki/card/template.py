"""Fingerprint minutiae templates and the toy matcher used on and off card."""

from __future__ import annotations

import struct
from collections.abc import Sequence
from dataclasses import dataclass

from eidpki.core import encoding as enc
from eidpki.errors import PkiError

MAX_MINUTIAE = 128
POSITION_TOLERANCE = 8
ANGLE_TOLERANCE = 20
DEFAULT_THRESHOLD = 0.6

Minutia = tuple[int, int, int]
_MINUTIA = struct.Struct(">HHH")


@dataclass(frozen=True)
class FingerprintTemplate:
    minutiae: tuple[Minutia, ...]
    quality: int = 100

    def __post_init__(self) -> None:
        object.__setattr__(self, "minutiae", tuple(tuple(int(v) for v in m) for m in self.minutiae))
        if len(self.minutiae) > MAX_MINUTIAE:
            raise PkiError("request-malformed", f"at most {MAX_MINUTIAE} minutiae")
        for x, y, angle in self.minutiae:
            if not (0 <= x <= 499 and 0 <= y <= 499 and 0 <= angle <= 359):
                raise PkiError("request-malformed", f"minutia out of range: {(x, y, angle)}")
        if not 0 <= self.quality <= 100:
            raise PkiError("request-malformed", "quality must be within 0..100")

    def to_bytes(self) -> bytes:
        return enc.encode_fields(
            {
                "minutiae": b"".join(_MINUTIA.pack(*m) for m in self.minutiae),
                "quality": enc.u64(self.quality),
            }
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "FingerprintTemplate":
        f = enc.decode_fields(data)
        enc.require(f, "minutiae", "quality")
        raw = f["minutiae"]
        if len(raw) % _MINUTIA.size:
            raise PkiError("encoding-error", "bad minutiae block")
        minutiae = tuple(_MINUTIA.unpack_from(raw, i) for i in range(0, len(raw), _MINUTIA.size))
        return cls(minutiae, enc.from_u64(f["quality"]))

    def as_dict(self) -> dict:
        return {"minutiae": [list(m) for m in self.minutiae], "quality": self.quality}

    @classmethod
    def from_dict(cls, d) -> "FingerprintTemplate":
        return cls(tuple(tuple(m) for m in d["minutiae"]), int(d.get("quality", 100)))


def angle_difference(a: int, b: int) -> int:
    d = abs(a - b) % 360
    return min(d, 360 - d)


def compatible(p: Minutia, q: Minutia) -> bool:
    return (
        abs(p[0] - q[0]) <= POSITION_TOLERANCE
        and abs(p[1] - q[1]) <= POSITION_TOLERANCE
        and angle_difference(p[2], q[2]) <= ANGLE_TOLERANCE
    )


def greedy_pairs(enrolled: Sequence[Minutia], probe: Sequence[Minutia]) -> list[tuple[int, int]]:
    """Pair minutiae nearest-first; each minutia is used at most once."""
    candidates = []
    for i, e in enumerate(enrolled):
        for j, p in enumerate(probe):
            if compatible(e, p):
                dist2 = (e[0] - p[0]) ** 2 + (e[1] - p[1]) ** 2
                candidates.append((dist2, angle_difference(e[2], p[2]), i, j))
    candidates.sort()
    used_e: set[int] = set()
    used_p: set[int] = set()
    pairs = []
    for _, _, i, j in candidates:
        if i not in used_e and j not in used_p:
            used_e.add(i)
            used_p.add(j)
            pairs.append((i, j))
    return pairs


def match_counts(enrolled: FingerprintTemplate, probe: FingerprintTemplate) -> tuple[int, int]:
    """(matched pairs, denominator) where the denominator is the larger template size."""
    matched = len(greedy_pairs(enrolled.minutiae, probe.minutiae))
    return matched, max(len(enrolled.minutiae), len(probe.minutiae))


def match_score(enrolled: FingerprintTemplate, probe: FingerprintTemplate) -> float:
    matched, total = match_counts(enrolled, probe)
    return matched / total if total else 0.0
