"""Emulated hardware security modules.

Each key container lives on a host (one emulated HSM) and is persisted as a
single armored file ``<root>/<host_id>/<container_id>``.  This is the only
place private keys are written to disk.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

from eidpki.core import encoding as enc
from eidpki.core.schemes import KeyPair
from eidpki.errors import PkiError

ARMOR = "EIDPKI HSM CONTAINER"


@dataclass
class KeyContainer:
    container_id: str
    host_id: str
    keys: dict[str, KeyPair] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        keys = {
            label: enc.encode_fields(
                {
                    "key_length_bits": enc.u64(kp.key_length_bits),
                    "private_key": kp.private_key,
                    "public_key": kp.public_key,
                    "scheme_id": enc.text(kp.scheme_id),
                }
            )
            for label, kp in self.keys.items()
        }
        return enc.encode_fields(
            {
                "container_id": enc.text(self.container_id),
                "host_id": enc.text(self.host_id),
                "keys": enc.encode_fields(keys),
            }
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "KeyContainer":
        f = enc.decode_fields(data)
        keys = {}
        for label, raw in enc.decode_fields(f["keys"]).items():
            k = enc.decode_fields(raw)
            keys[label] = KeyPair(
                k["public_key"], k["private_key"], enc.from_text(k["scheme_id"]), enc.from_u64(k["key_length_bits"])
            )
        return cls(enc.from_text(f["container_id"]), enc.from_text(f["host_id"]), keys)


def atomic_write(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class KeyStore:
    def __init__(self, root: Path | str | None = None) -> None:
        self.root = Path(root) if root is not None else None
        self.containers: dict[str, KeyContainer] = {}
        self._lock = threading.RLock()
        if self.root is not None and self.root.exists():
            for path in sorted(self.root.glob("*/*")):
                if path.suffix == ".tmp":
                    continue
                container = KeyContainer.from_bytes(enc.dearmor(ARMOR, path.read_text()))
                self.containers[container.container_id] = container

    def create_container(self, host_id: str) -> KeyContainer:
        with self._lock:
            n = len(self.containers) + 1
            while f"kc-{n:04d}" in self.containers:
                n += 1
            container = KeyContainer(f"kc-{n:04d}", host_id)
            self.containers[container.container_id] = container
            self._persist(container)
            return container

    def put(self, container_id: str, label: str, key: KeyPair) -> None:
        with self._lock:
            for other in self.containers.values():
                for existing in other.keys.values():
                    if existing.private_key == key.private_key:
                        raise PkiError("key-conflict", "key pair already held by another container")
            container = self.container(container_id)
            if label in container.keys:
                raise PkiError("key-conflict", f"{container_id} already holds {label}")
            container.keys[label] = key
            self._persist(container)

    def container(self, container_id: str) -> KeyContainer:
        try:
            return self.containers[container_id]
        except KeyError:
            raise PkiError("unknown-container", container_id) from None

    def get(self, container_id: str, label: str) -> KeyPair:
        try:
            return self.container(container_id).keys[label]
        except KeyError:
            raise PkiError("unknown-key", f"{container_id}/{label}") from None

    def key_pair_count(self) -> int:
        return sum(len(c.keys) for c in self.containers.values())

    def _persist(self, container: KeyContainer) -> None:
        if self.root is None:
            return
        atomic_write(self.root / container.host_id / container.container_id, enc.armor(ARMOR, container.to_bytes()))
