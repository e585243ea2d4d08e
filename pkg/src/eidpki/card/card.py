"""Emulated eID smart card.

The card exposes one entry point, :meth:`Card.process`, which consumes a
command frame and returns a response frame::

    2-byte length | instruction | payload | 16-byte MAC (channeled only)

Only ``OPEN``, ``READ_PUBLIC`` and ``READ_CERTS`` are accepted in the clear.
Everything else needs an open secure channel to the right applet.  A MAC or
counter mismatch closes the channel for good.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import re
import struct
import threading
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from eidpki.card.sam import derive_session_key
from eidpki.card.template import DEFAULT_THRESHOLD, FingerprintTemplate, match_counts
from eidpki.core import encoding as enc
from eidpki.core.certificate import Certificate
from eidpki.core.rng import Rng, system_rng
from eidpki.core.schemes import KeyPair, get_scheme, verify
from eidpki.errors import PkiError

MAC_LEN = 16
NONCE_LEN = 16
MAX_RETRIES = 3
PIN_PATTERN = re.compile(r"^[0-9]{4,8}$")
CARD_ARMOR = "EIDPKI CARD"

TO_CARD = b"\x01"
FROM_CARD = b"\x02"


class Ins(enum.IntEnum):
    OPEN = 0xA4
    READ_PUBLIC = 0xB1
    READ_CERTS = 0xB2
    MUTUAL_AUTH = 0x82
    VERIFY_PIN = 0x20
    UNBLOCK_PIN = 0x2C
    SIGN = 0x2A
    READ_TEMPLATE = 0xB0
    MOC_MATCH = 0x88


class Applet(str, enum.Enum):
    PKI = "pki"
    MOC = "moc"


class CardKey(str, enum.Enum):
    AUTH = "auth"
    SIGN = "sign"


SW_OK = 0x90
SW_ERROR = 0x6F
# errors raised outside an authenticated channel carry no MAC
SW_PLAIN_ERROR = 0x6A

_PLAIN = {Ins.OPEN, Ins.READ_PUBLIC, Ins.READ_CERTS}
_APPLET_OF = {
    Ins.VERIFY_PIN: Applet.PKI,
    Ins.UNBLOCK_PIN: Applet.PKI,
    Ins.SIGN: Applet.PKI,
    Ins.READ_TEMPLATE: Applet.MOC,
    Ins.MOC_MATCH: Applet.MOC,
}


def build_frame(ins: int, payload: bytes, mac: bytes = b"") -> bytes:
    body = bytes([ins]) + payload + mac
    if len(body) > 0xFFFF:
        raise PkiError("request-malformed", "frame too long")
    return struct.pack(">H", len(body)) + body


def split_frame(frame: bytes, channeled: bool) -> tuple[int, bytes, bytes]:
    if len(frame) < 3:
        raise PkiError("request-malformed", "short frame")
    (length,) = struct.unpack_from(">H", frame)
    body = frame[2:]
    if length != len(body):
        raise PkiError("request-malformed", "length mismatch")
    if channeled:
        if len(body) < 1 + MAC_LEN:
            raise PkiError("request-malformed", "missing MAC")
        return body[0], body[1:-MAC_LEN], body[-MAC_LEN:]
    return body[0], body[1:], b""


def compute_mac(key: bytes, direction: bytes, counter: int, ins: int, payload: bytes) -> bytes:
    msg = direction + struct.pack(">Q", counter) + bytes([ins]) + payload
    return hmac.new(key, msg, hashlib.sha256).digest()[:MAC_LEN]


def hash_pin(card_id: str, pin: str) -> bytes:
    return hashlib.sha256(b"eidpki-pin" + card_id.encode() + b"\x00" + pin.encode()).digest()


def check_pin_format(pin: str) -> None:
    if not isinstance(pin, str) or not PIN_PATTERN.match(pin):
        raise PkiError("request-malformed", "PIN must be 4 to 8 digits")


def unblock_message(card_id: str) -> bytes:
    return card_id.encode("utf-8") + b"unblock"


@dataclass(frozen=True)
class PublicDataFile:
    file_id: str
    content: bytes
    issuer_signature: bytes = field(default=b"", repr=False)

    def signed_bytes(self) -> bytes:
        return enc.encode_fields({"content": self.content, "file_id": enc.text(self.file_id)})

    def to_bytes(self) -> bytes:
        return enc.encode_fields(
            {"content": self.content, "file_id": enc.text(self.file_id), "issuer_signature": self.issuer_signature}
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "PublicDataFile":
        f = enc.decode_fields(data)
        enc.require(f, "content", "file_id", "issuer_signature")
        return cls(enc.from_text(f["file_id"]), f["content"], f["issuer_signature"])

    def verify(self, scheme_id: str, public_key: bytes) -> bool:
        return verify(scheme_id, public_key, self.signed_bytes(), self.issuer_signature)


@dataclass
class PinState:
    pin_hash: bytes = field(repr=False)
    retries_remaining: int = MAX_RETRIES
    verified_in_session: bool = False

    @property
    def blocked(self) -> bool:
        return self.retries_remaining == 0


@dataclass
class _CardChannel:
    channel_id: int
    applet: Applet
    nonce: bytes
    session_key: bytes | None = None
    authenticated: bool = False
    recv_counter: int = 0
    send_counter: int = 0
    open: bool = True
    sign_confirmed: bool = False


class Card:
    def __init__(
        self,
        card_id: str,
        public_files: list[PublicDataFile],
        issuer_certificate: Certificate,
        auth_pair: KeyPair,
        auth_cert: Certificate,
        sign_pair: KeyPair,
        sign_cert: Certificate,
        pin: PinState,
        template: FingerprintTemplate,
        sm_master_key_label: str,
        sm_master_key: bytes,
        threshold: float = DEFAULT_THRESHOLD,
        rng: Rng = system_rng,
    ) -> None:
        if not 0 < threshold <= 1:
            raise PkiError("request-malformed", "threshold must be in (0, 1]")
        self.card_id = card_id
        self.id_applet = list(public_files)
        self.issuer_certificate = issuer_certificate
        self._auth_pair = auth_pair
        self.auth_cert = auth_cert
        self._sign_pair = sign_pair
        self.sign_cert = sign_cert
        self.pin = pin
        self._template = template
        self.threshold = threshold
        self.sm_master_key_label = sm_master_key_label
        self._sm_master_key = sm_master_key
        self.rng = rng
        self.channel_opens = 0
        self._channel: _CardChannel | None = None
        self._next_channel_id = 1
        self._state_lock = threading.RLock()
        self._free = threading.Condition(self._state_lock)

    @classmethod
    def personalize(
        cls,
        card_id: str,
        public_data: dict[str, bytes],
        issuer_key: KeyPair,
        issuer_certificate: Certificate,
        auth_pair: KeyPair,
        auth_cert: Certificate,
        sign_pair: KeyPair,
        sign_cert: Certificate,
        pin: str,
        template: FingerprintTemplate,
        sm_master_key_label: str,
        sm_master_key: bytes,
        threshold: float = DEFAULT_THRESHOLD,
        rng: Rng = system_rng,
    ) -> "Card":
        check_pin_format(pin)
        files = []
        for file_id in sorted(public_data):
            unsigned = PublicDataFile(file_id, public_data[file_id])
            sig = get_scheme(issuer_key.scheme_id).sign(issuer_key.private_key, unsigned.signed_bytes())
            files.append(PublicDataFile(file_id, public_data[file_id], sig))
        return cls(
            card_id, files, issuer_certificate, auth_pair, auth_cert, sign_pair, sign_cert,
            PinState(hash_pin(card_id, pin)), template, sm_master_key_label, sm_master_key, threshold, rng,
        )

    def __repr__(self) -> str:
        return f"Card({self.card_id!r})"

    # -- channel bookkeeping -------------------------------------------------

    @property
    def channel_open(self) -> bool:
        return self._channel is not None and self._channel.open

    def _close_channel(self) -> None:
        if self._channel is not None:
            self._channel.open = False
        self._channel = None
        self.pin.verified_in_session = False
        self._free.notify_all()

    def close_channel(self, channel_id: int) -> None:
        with self._state_lock:
            if self._channel is not None and self._channel.channel_id == channel_id:
                self._close_channel()

    # -- command processing --------------------------------------------------

    def process(self, frame: bytes) -> bytes:
        with self._state_lock:
            try:
                return self._dispatch(frame)
            except PkiError as err:
                return build_frame(SW_PLAIN_ERROR, err.code.encode())

    def _dispatch(self, frame: bytes) -> bytes:
        ins, payload, _ = split_frame(frame, channeled=False)
        if ins in _PLAIN:
            return self._plain(Ins(ins), payload)
        ch = self._channel
        if ch is None or not ch.open or ch.session_key is None:
            raise PkiError("channel-required", "secure messaging required")
        ins, payload, mac = split_frame(frame, channeled=True)
        expected = compute_mac(ch.session_key, TO_CARD, ch.recv_counter + 1, ins, payload)
        if not hmac.compare_digest(expected, mac):
            self._close_channel()
            raise PkiError("channel-closed", "MAC or counter mismatch")
        ch.recv_counter += 1
        try:
            ins = Ins(ins)
        except ValueError:
            return self._reply(ch, SW_ERROR, b"unknown-instruction")
        if ins is Ins.MUTUAL_AUTH:
            ch.authenticated = True
            return self._reply(ch, SW_OK, b"")
        if not ch.authenticated:
            return self._reply(ch, SW_ERROR, b"channel-required")
        if _APPLET_OF.get(ins) is not ch.applet:
            return self._reply(ch, SW_ERROR, b"wrong-applet")
        try:
            data = self._channeled(ch, ins, payload)
        except PkiError as err:
            return self._reply(ch, SW_ERROR, err.code.encode())
        return self._reply(ch, SW_OK, data)

    def _reply(self, ch: _CardChannel, status: int, data: bytes) -> bytes:
        ch.send_counter += 1
        return build_frame(status, data, compute_mac(ch.session_key, FROM_CARD, ch.send_counter, status, data))

    def _plain(self, ins: Ins, payload: bytes) -> bytes:
        if ins is Ins.READ_PUBLIC:
            return build_frame(SW_OK, enc.encode_list(f.to_bytes() for f in self.id_applet))
        if ins is Ins.READ_CERTS:
            return build_frame(
                SW_OK,
                enc.encode_fields(
                    {
                        "auth": self.auth_cert.to_bytes(),
                        "issuer": self.issuer_certificate.to_bytes(),
                        "sign": self.sign_cert.to_bytes(),
                    }
                ),
            )
        # OPEN: applet name + terminal nonce -> card id + card nonce
        if len(payload) < NONCE_LEN + 1:
            raise PkiError("request-malformed", "OPEN needs applet and nonce")
        applet = Applet(payload[:-NONCE_LEN].decode())
        if self.channel_open:
            if not self._free.wait_for(lambda: not self.channel_open, timeout=5.0):
                raise PkiError("card-busy", "another channel is open")
        card_nonce = self.rng.bytes(NONCE_LEN)
        nonce = payload[-NONCE_LEN:] + card_nonce
        ch = _CardChannel(self._next_channel_id, applet, nonce)
        ch.session_key = derive_session_key(self._sm_master_key, self.card_id, nonce)
        self._next_channel_id += 1
        self._channel = ch
        self.pin.verified_in_session = False
        self.channel_opens += 1
        body = enc.encode_fields(
            {"card_id": enc.text(self.card_id), "channel_id": enc.u64(ch.channel_id), "nonce": card_nonce}
        )
        return build_frame(SW_OK, body)

    def _channeled(self, ch: _CardChannel, ins: Ins, payload: bytes) -> bytes:
        if ins is Ins.VERIFY_PIN:
            return self._verify_pin(ch, payload.decode("utf-8", "replace"))
        if ins is Ins.UNBLOCK_PIN:
            f = enc.decode_fields(payload)
            enc.require(f, "admin_auth", "new_pin")
            return self._unblock(f["admin_auth"], enc.from_text(f["new_pin"]))
        if ins is Ins.SIGN:
            f = enc.decode_fields(payload)
            enc.require(f, "confirm", "key", "payload_hash")
            return self._sign(ch, CardKey(enc.from_text(f["key"])), enc.from_flag(f["confirm"]), f["payload_hash"])
        if ins is Ins.READ_TEMPLATE:
            return self._template.to_bytes()
        if ins is Ins.MOC_MATCH:
            probe = FingerprintTemplate.from_bytes(payload)
            matched, total = match_counts(self._template, probe)
            score = matched / total if total else 0.0
            return enc.encode_fields(
                {
                    "decision": enc.flag(score >= self.threshold),
                    "matched": enc.u64(matched),
                    "total": enc.u64(total),
                }
            )
        raise PkiError("unknown-instruction", str(ins))

    def _verify_pin(self, ch: _CardChannel, attempt: str) -> bytes:
        pin = self.pin
        if pin.blocked:
            result = "blocked"
        elif hmac.compare_digest(hash_pin(self.card_id, attempt), pin.pin_hash):
            pin.retries_remaining = MAX_RETRIES
            pin.verified_in_session = True
            ch.sign_confirmed = True
            result = "ok"
        else:
            pin.retries_remaining -= 1
            pin.verified_in_session = False
            ch.sign_confirmed = False
            result = "blocked" if pin.blocked else "wrong"
        return enc.encode_fields({"result": enc.text(result), "retries": enc.u64(pin.retries_remaining)})

    def _unblock(self, admin_auth: bytes, new_pin: str) -> bytes:
        issuer = self.issuer_certificate
        if not verify(issuer.scheme_id, issuer.public_key, unblock_message(self.card_id), admin_auth):
            raise PkiError("unauthorized", "admin credential rejected")
        check_pin_format(new_pin)
        self.pin.pin_hash = hash_pin(self.card_id, new_pin)
        self.pin.retries_remaining = MAX_RETRIES
        self.pin.verified_in_session = False
        return b""

    def _sign(self, ch: _CardChannel, key: CardKey, confirm: bool, payload_hash: bytes) -> bytes:
        if len(payload_hash) != 32:
            raise PkiError("request-malformed", "payload hash must be 32 bytes")
        if self.pin.blocked:
            raise PkiError("pin-blocked")
        if not self.pin.verified_in_session:
            raise PkiError("pin-required")
        if key is CardKey.SIGN:
            if not (confirm and ch.sign_confirmed):
                raise PkiError("pin-required", "signature key needs fresh PIN confirmation")
            ch.sign_confirmed = False
            pair = self._sign_pair
        else:
            pair = self._auth_pair
        return get_scheme(pair.scheme_id).sign(pair.private_key, payload_hash)

    # -- persistence ---------------------------------------------------------

    def _secret_block(self) -> bytes:
        def pair(kp: KeyPair) -> bytes:
            return enc.encode_fields(
                {
                    "key_length_bits": enc.u64(kp.key_length_bits),
                    "private_key": kp.private_key,
                    "public_key": kp.public_key,
                    "scheme_id": enc.text(kp.scheme_id),
                }
            )

        return enc.encode_fields(
            {
                "auth_pair": pair(self._auth_pair),
                "pin_hash": self.pin.pin_hash,
                "sign_pair": pair(self._sign_pair),
                "sm_master_key": self._sm_master_key,
                "template": self._template.to_bytes(),
            }
        )

    def to_bytes(self, seal_key: bytes, rng: Rng = system_rng) -> bytes:
        """Public record in clear; keys, PIN hash and template sealed."""
        nonce = rng.bytes(12)
        sealed = nonce + AESGCM(seal_key).encrypt(nonce, self._secret_block(), self.card_id.encode())
        return enc.encode_fields(
            {
                "auth_cert": self.auth_cert.to_bytes(),
                "card_id": enc.text(self.card_id),
                "id_applet": enc.encode_list(f.to_bytes() for f in self.id_applet),
                "issuer_certificate": self.issuer_certificate.to_bytes(),
                "retries_remaining": enc.u64(self.pin.retries_remaining),
                "sealed": sealed,
                "sign_cert": self.sign_cert.to_bytes(),
                "sm_master_key_label": enc.text(self.sm_master_key_label),
                "threshold_ppm": enc.u64(round(self.threshold * 1_000_000)),
            }
        )

    @classmethod
    def from_bytes(cls, data: bytes, seal_key: bytes, rng: Rng = system_rng) -> "Card":
        f = enc.decode_fields(data)
        card_id = enc.from_text(f["card_id"])
        sealed = f["sealed"]
        try:
            secret = enc.decode_fields(AESGCM(seal_key).decrypt(sealed[:12], sealed[12:], card_id.encode()))
        except InvalidTag as exc:
            raise PkiError("card-unreadable", "sealed block does not open") from exc

        def pair(raw: bytes) -> KeyPair:
            k = enc.decode_fields(raw)
            return KeyPair(k["public_key"], k["private_key"], enc.from_text(k["scheme_id"]),
                           enc.from_u64(k["key_length_bits"]))

        card = cls(
            card_id,
            [PublicDataFile.from_bytes(raw) for raw in enc.decode_list(f["id_applet"])],
            Certificate.from_bytes(f["issuer_certificate"]),
            pair(secret["auth_pair"]),
            Certificate.from_bytes(f["auth_cert"]),
            pair(secret["sign_pair"]),
            Certificate.from_bytes(f["sign_cert"]),
            PinState(secret["pin_hash"], enc.from_u64(f["retries_remaining"])),
            FingerprintTemplate.from_bytes(secret["template"]),
            enc.from_text(f["sm_master_key_label"]),
            secret["sm_master_key"],
            enc.from_u64(f["threshold_ppm"]) / 1_000_000,
            rng,
        )
        return card

    def armored(self, seal_key: bytes, rng: Rng = system_rng) -> str:
        return enc.armor(CARD_ARMOR, self.to_bytes(seal_key, rng))

    @classmethod
    def from_armored(cls, text: str, seal_key: bytes, rng: Rng = system_rng) -> "Card":
        return cls.from_bytes(enc.dearmor(CARD_ARMOR, text), seal_key, rng)
