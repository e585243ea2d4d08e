"""Security access module: holds secure-messaging master keys."""

from __future__ import annotations

import hashlib

from eidpki.errors import PkiError


def derive_session_key(master_key: bytes, card_id: str, nonce: bytes) -> bytes:
    return hashlib.sha256(master_key + card_id.encode("utf-8") + nonce).digest()


class SAM:
    """Master keys stay inside; only per-channel session keys come out."""

    def __init__(self, sam_id: str, master_keys: dict[str, bytes] | None = None) -> None:
        self.sam_id = sam_id
        self._master_keys = dict(master_keys or {})

    def __repr__(self) -> str:
        return f"SAM({self.sam_id!r}, labels={sorted(self._master_keys)})"

    def __getstate__(self):
        raise TypeError("SAM master keys are not serializable")

    def holds(self, label: str) -> bool:
        return label in self._master_keys

    def load_key(self, label: str, key: bytes) -> None:
        self._master_keys[label] = key

    def session_key(self, label: str, card_id: str, nonce: bytes) -> bytes:
        if label not in self._master_keys:
            raise PkiError("channel-refused", f"SAM {self.sam_id} lacks key {label}")
        return derive_session_key(self._master_keys[label], card_id, nonce)
