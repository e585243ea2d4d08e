"""Pluggable key schemes.

Three schemes are registered out of the box:

``test-mac``
    Deterministic keyed hash, ``SHA-256(key || message)``, where the public
    key *is* the private key.  INSECURE: anyone able to verify can forge.  It
    exists so that tests and oracles can recompute signatures by hand.
``ed25519``
    Deterministic asymmetric signatures; the default for real operation.
``x25519``
    Encryption-only (ephemeral X25519 + HKDF-SHA256 + AES-GCM).  Used for
    encryption-profile certificates whose private keys are escrowed.

``key_length_bits`` is metadata copied onto certificates; it does not change
the underlying primitive.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ed25519, x25519
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from eidpki.core.rng import Rng, system_rng
from eidpki.errors import PkiError

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes = field(repr=False)
    scheme_id: str
    key_length_bits: int

    def public_view(self) -> "PublicKey":
        return PublicKey(self.public_key, self.scheme_id, self.key_length_bits)


@dataclass(frozen=True)
class PublicKey:
    public_key: bytes
    scheme_id: str
    key_length_bits: int


class SignatureScheme:
    scheme_id: str = ""
    deterministic: bool = True
    can_sign: bool = True
    can_encrypt: bool = False

    def generate(self, rng: Rng) -> tuple[bytes, bytes]:
        raise NotImplementedError

    def public_from_private(self, private_key: bytes) -> bytes:
        raise NotImplementedError

    def sign(self, private_key: bytes, message: bytes) -> bytes:
        raise PkiError("scheme-capability", f"{self.scheme_id} cannot sign")

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        raise PkiError("scheme-capability", f"{self.scheme_id} cannot verify")

    def encrypt(self, public_key: bytes, plaintext: bytes, rng: Rng = system_rng) -> bytes:
        raise PkiError("scheme-capability", f"{self.scheme_id} cannot encrypt")

    def decrypt(self, private_key: bytes, ciphertext: bytes) -> bytes:
        raise PkiError("scheme-capability", f"{self.scheme_id} cannot decrypt")


class TestMacScheme(SignatureScheme):
    scheme_id = "test-mac"
    can_encrypt = True

    def generate(self, rng: Rng) -> tuple[bytes, bytes]:
        key = rng.bytes(32)
        return key, key

    def public_from_private(self, private_key: bytes) -> bytes:
        return private_key

    def sign(self, private_key: bytes, message: bytes) -> bytes:
        return hashlib.sha256(private_key + message).digest()

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        return hmac.compare_digest(self.sign(public_key, message), signature)

    def encrypt(self, public_key: bytes, plaintext: bytes, rng: Rng = system_rng) -> bytes:
        nonce = rng.bytes(12)
        key = hashlib.sha256(b"test-mac-enc" + public_key).digest()
        return nonce + AESGCM(key).encrypt(nonce, plaintext, None)

    def decrypt(self, private_key: bytes, ciphertext: bytes) -> bytes:
        key = hashlib.sha256(b"test-mac-enc" + private_key).digest()
        try:
            return AESGCM(key).decrypt(ciphertext[:12], ciphertext[12:], None)
        except InvalidTag as exc:
            raise PkiError("decrypt-failed") from exc


class Ed25519Scheme(SignatureScheme):
    scheme_id = "ed25519"

    def generate(self, rng: Rng) -> tuple[bytes, bytes]:
        private = rng.bytes(32)
        return self.public_from_private(private), private

    def public_from_private(self, private_key: bytes) -> bytes:
        sk = ed25519.Ed25519PrivateKey.from_private_bytes(private_key)
        return sk.public_key().public_bytes(_RAW, _RAW_PUB)

    def sign(self, private_key: bytes, message: bytes) -> bytes:
        return ed25519.Ed25519PrivateKey.from_private_bytes(private_key).sign(message)

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        try:
            ed25519.Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        except (InvalidSignature, ValueError):
            return False
        return True


def _hkdf(shared: bytes, info: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=32, salt=None, info=info).derive(shared)


class X25519Scheme(SignatureScheme):
    scheme_id = "x25519"
    can_sign = False
    can_encrypt = True
    deterministic = False

    def generate(self, rng: Rng) -> tuple[bytes, bytes]:
        private = rng.bytes(32)
        return self.public_from_private(private), private

    def public_from_private(self, private_key: bytes) -> bytes:
        sk = x25519.X25519PrivateKey.from_private_bytes(private_key)
        return sk.public_key().public_bytes(_RAW, _RAW_PUB)

    def encrypt(self, public_key: bytes, plaintext: bytes, rng: Rng = system_rng) -> bytes:
        eph = x25519.X25519PrivateKey.from_private_bytes(rng.bytes(32))
        eph_pub = eph.public_key().public_bytes(_RAW, _RAW_PUB)
        shared = eph.exchange(x25519.X25519PublicKey.from_public_bytes(public_key))
        key = _hkdf(shared, b"eidpki-ecies" + eph_pub + public_key)
        nonce = rng.bytes(12)
        return eph_pub + nonce + AESGCM(key).encrypt(nonce, plaintext, None)

    def decrypt(self, private_key: bytes, ciphertext: bytes) -> bytes:
        if len(ciphertext) < 32 + 12 + 16:
            raise PkiError("decrypt-failed", "ciphertext too short")
        eph_pub, nonce, body = ciphertext[:32], ciphertext[32:44], ciphertext[44:]
        sk = x25519.X25519PrivateKey.from_private_bytes(private_key)
        shared = sk.exchange(x25519.X25519PublicKey.from_public_bytes(eph_pub))
        own_pub = sk.public_key().public_bytes(_RAW, _RAW_PUB)
        key = _hkdf(shared, b"eidpki-ecies" + eph_pub + own_pub)
        try:
            return AESGCM(key).decrypt(nonce, body, None)
        except InvalidTag as exc:
            raise PkiError("decrypt-failed") from exc


_REGISTRY: dict[str, SignatureScheme] = {}


def register_scheme(scheme: SignatureScheme) -> None:
    _REGISTRY[scheme.scheme_id] = scheme


def get_scheme(scheme_id: str) -> SignatureScheme:
    try:
        return _REGISTRY[scheme_id]
    except KeyError:
        raise PkiError("scheme-not-registered", scheme_id) from None


def registered_schemes() -> list[str]:
    return sorted(_REGISTRY)


for _s in (TestMacScheme(), Ed25519Scheme(), X25519Scheme()):
    register_scheme(_s)


def generate_key_pair(scheme_id: str, key_length_bits: int, rng: Rng = system_rng) -> KeyPair:
    scheme = get_scheme(scheme_id)
    if key_length_bits <= 0:
        raise PkiError("request-malformed", "key_length_bits must be positive")
    public, private = scheme.generate(rng)
    return KeyPair(public, private, scheme_id, key_length_bits)


def sign(key: KeyPair, message: bytes) -> bytes:
    return get_scheme(key.scheme_id).sign(key.private_key, message)


def verify(scheme_id: str, public_key: bytes, message: bytes, signature: bytes) -> bool:
    scheme = get_scheme(scheme_id)
    if not scheme.can_sign:
        return False
    return scheme.verify(public_key, message, signature)
