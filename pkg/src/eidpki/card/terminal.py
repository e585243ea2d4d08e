"""Terminal side of the card interface.

These functions build command frames, push them through
:meth:`Card.process` and unpack the responses.  Every frame in either
direction is appended to ``SecureChannel.traffic`` so tests can inspect
what actually crossed the card boundary.
"""

from __future__ import annotations

import hmac
from dataclasses import dataclass, field

from eidpki.card.card import (
    FROM_CARD,
    NONCE_LEN,
    SW_ERROR,
    SW_OK,
    SW_PLAIN_ERROR,
    TO_CARD,
    Applet,
    Card,
    CardKey,
    Ins,
    PublicDataFile,
    build_frame,
    compute_mac,
    split_frame,
)
from eidpki.card.sam import SAM
from eidpki.card.template import FingerprintTemplate
from eidpki.core import encoding as enc
from eidpki.core.certificate import Certificate
from eidpki.core.rng import Rng, system_rng
from eidpki.errors import PkiError


def _plain_call(card: Card, ins: Ins, payload: bytes = b"", traffic: list | None = None) -> bytes:
    frame = build_frame(ins, payload)
    reply = card.process(frame)
    if traffic is not None:
        traffic.append(("out", frame))
        traffic.append(("in", reply))
    status, data, _ = split_frame(reply, channeled=False)
    if status != SW_OK:
        raise PkiError(data.decode() or "card-error")
    return data


def read_public_data(card: Card) -> list[PublicDataFile]:
    """Plain read: no secure messaging and no PIN involved."""
    data = _plain_call(card, Ins.READ_PUBLIC)
    return [PublicDataFile.from_bytes(raw) for raw in enc.decode_list(data)]


@dataclass(frozen=True)
class CardCertificates:
    auth: Certificate
    sign: Certificate
    issuer: Certificate


def read_certificates(card: Card) -> CardCertificates:
    f = enc.decode_fields(_plain_call(card, Ins.READ_CERTS))
    return CardCertificates(
        Certificate.from_bytes(f["auth"]), Certificate.from_bytes(f["sign"]), Certificate.from_bytes(f["issuer"])
    )


@dataclass
class SecureChannel:
    card: Card
    channel_id: int
    applet: Applet
    session_mac_key: bytes = field(repr=False)
    send_counter: int = 0
    recv_counter: int = 0
    open: bool = True
    traffic: list[tuple[str, bytes]] = field(default_factory=list, repr=False)

    def transmit(self, ins: Ins, payload: bytes = b"") -> bytes:
        if not self.open:
            raise PkiError("channel-required", "channel is closed")
        self.send_counter += 1
        frame = build_frame(ins, payload, compute_mac(self.session_mac_key, TO_CARD, self.send_counter, ins, payload))
        return self.exchange(frame)

    def exchange(self, frame: bytes) -> bytes:
        """Send a pre-built frame (tests use this to replay or tamper)."""
        self.traffic.append(("out", frame))
        reply = self.card.process(frame)
        self.traffic.append(("in", reply))
        if len(reply) > 2 and reply[2] == SW_PLAIN_ERROR:
            # unauthenticated error: the card refused or dropped the channel
            self.open = False
            raise PkiError(split_frame(reply, channeled=False)[1].decode() or "channel-closed")
        status, data, mac = split_frame(reply, channeled=True)
        expected = compute_mac(self.session_mac_key, FROM_CARD, self.recv_counter + 1, status, data)
        if not hmac.compare_digest(expected, mac):
            self.close()
            raise PkiError("channel-closed", "response MAC mismatch")
        self.recv_counter += 1
        if status == SW_ERROR:
            raise PkiError(data.decode() or "card-error")
        return data

    def close(self) -> None:
        if self.open:
            self.open = False
            self.card.close_channel(self.channel_id)

    def __enter__(self) -> "SecureChannel":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_secure_channel(card: Card, sam: SAM, applet: Applet | str, rng: Rng = system_rng) -> SecureChannel:
    applet = Applet(applet)
    if not sam.holds(card.sm_master_key_label):
        raise PkiError("channel-refused", f"SAM lacks {card.sm_master_key_label}")
    traffic: list[tuple[str, bytes]] = []
    terminal_nonce = rng.bytes(NONCE_LEN)
    f = enc.decode_fields(_plain_call(card, Ins.OPEN, applet.value.encode() + terminal_nonce, traffic))
    card_id = enc.from_text(f["card_id"])
    nonce = terminal_nonce + f["nonce"]
    channel = SecureChannel(
        card, enc.from_u64(f["channel_id"]), applet, sam.session_key(card.sm_master_key_label, card_id, nonce),
        traffic=traffic,
    )
    try:
        channel.transmit(Ins.MUTUAL_AUTH)
    except PkiError as err:
        channel.close()
        raise PkiError("channel-refused", f"card rejected the SAM ({err.code})") from None
    return channel


@dataclass(frozen=True)
class PinResult:
    result: str
    retries_remaining: int

    @property
    def ok(self) -> bool:
        return self.result == "ok"


def verify_pin(channel: SecureChannel, pin_attempt: str) -> PinResult:
    f = enc.decode_fields(channel.transmit(Ins.VERIFY_PIN, pin_attempt.encode("utf-8")))
    return PinResult(enc.from_text(f["result"]), enc.from_u64(f["retries"]))


def unblock_pin(channel: SecureChannel, admin_auth: bytes, new_pin: str) -> None:
    channel.transmit(
        Ins.UNBLOCK_PIN, enc.encode_fields({"admin_auth": admin_auth, "new_pin": enc.text(new_pin)})
    )


def card_sign(channel: SecureChannel, key: CardKey | str, payload_hash: bytes, confirm: bool = False) -> bytes:
    payload = enc.encode_fields(
        {"confirm": enc.flag(confirm), "key": enc.text(CardKey(key).value), "payload_hash": payload_hash}
    )
    return channel.transmit(Ins.SIGN, payload)


def read_fingerprint_template(channel: SecureChannel | None) -> FingerprintTemplate:
    if channel is None or not channel.open:
        raise PkiError("channel-required", "protected data needs secure messaging")
    return FingerprintTemplate.from_bytes(channel.transmit(Ins.READ_TEMPLATE))


def moc_match(channel: SecureChannel | None, probe: FingerprintTemplate) -> tuple[bool, float]:
    if channel is None or not channel.open:
        raise PkiError("channel-required", "match-on-card needs secure messaging")
    f = enc.decode_fields(channel.transmit(Ins.MOC_MATCH, probe.to_bytes()))
    total = enc.from_u64(f["total"])
    return enc.from_flag(f["decision"]), (enc.from_u64(f["matched"]) / total if total else 0.0)
