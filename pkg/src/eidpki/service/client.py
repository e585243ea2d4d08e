"""Clients for the central validation services.

``ServiceClient.calls`` counts requests per operation; the toolkit's
function-matrix tests rely on those counters to prove which rows stay
offline.
"""

from __future__ import annotations

import socket
import threading
from collections import Counter
from collections.abc import Callable

from eidpki.core.certificate import Certificate
from eidpki.core.path import ValidationOutcome
from eidpki.errors import PkiError
from eidpki.revocation.lists import CRL, PCL
from eidpki.revocation.ocsp import OcspRequest, OcspResponse
from eidpki.revocation.tsa import TimestampToken
from eidpki.service.wire import MAX_LINE, encode_request, parse_response


class ServiceClient:
    def __init__(self) -> None:
        self.calls: Counter[str] = Counter()
        self.available = True

    @property
    def total_calls(self) -> int:
        return sum(self.calls.values())

    def call(self, op: str, params: dict) -> dict:
        self.calls[op] += 1
        if not self.available:
            raise PkiError("validation-unavailable", f"service unreachable for {op}")
        return parse_response(self._roundtrip(encode_request(op, params)))

    def _roundtrip(self, line: bytes) -> bytes:
        raise NotImplementedError

    # typed helpers

    def ocsp_check(self, request: OcspRequest) -> OcspResponse:
        return OcspResponse.from_dict(self.call("ocsp.check", request.as_dict())["response"])

    def crl_fetch(self, ca_id: str) -> CRL:
        return CRL.from_armored(self.call("crl.fetch", {"ca_id": ca_id})["crl"])

    def pcl_fetch(self, ca_id: str) -> PCL:
        return PCL.from_armored(self.call("pcl.fetch", {"ca_id": ca_id})["pcl"])

    def validate_signature(self, document_hash: bytes, signature: bytes, ca_id: str, serial: int,
                           at_time: int | None = None) -> ValidationOutcome:
        params = {"document_hash": document_hash.hex(), "signature": signature.hex(), "ca_id": ca_id, "serial": serial}
        if at_time is not None:
            params["at_time"] = at_time
        body = self.call("validate.signature", params)
        o = body["outcome"]
        return ValidationOutcome(o["verdict"], o["checked_at"], o["revocation_source"], o["detail"])

    def tsa_stamp(self, document_hash: bytes) -> TimestampToken:
        return TimestampToken.from_dict(self.call("tsa.stamp", {"document_hash": document_hash.hex()})["token"])

    def repo_fetch(self, **query) -> list[Certificate]:
        return [Certificate.from_armored(c) for c in self.call("repo.fetch", query)["certificates"]]

    def gateway_check(self, card_id: str) -> str:
        return self.call("gateway.check", {"card_id": card_id})["decision"]


class LocalClient(ServiceClient):
    """Talks to an in-process handler through the exact wire encoding."""

    def __init__(self, handler: Callable[[bytes], bytes]) -> None:
        super().__init__()
        self.handler = handler

    def _roundtrip(self, line: bytes) -> bytes:
        return self.handler(line)


class TcpClient(ServiceClient):
    def __init__(self, host: str, port: int, timeout: float = 10.0) -> None:
        super().__init__()
        self.address = (host, port)
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._reader = None
        self._lock = threading.Lock()

    @classmethod
    def from_addr(cls, addr: str) -> "TcpClient":
        host, _, port = addr.rpartition(":")
        return cls(host or "127.0.0.1", int(port))

    def _connect(self) -> None:
        try:
            self._sock = socket.create_connection(self.address, timeout=self.timeout)
        except OSError as exc:
            raise PkiError("validation-unavailable", f"cannot reach {self.address}: {exc}") from None
        self._reader = self._sock.makefile("rb")

    def _roundtrip(self, line: bytes) -> bytes:
        # no automatic retry: a lost reply may belong to an applied mutation
        with self._lock:
            if self._sock is None:
                self._connect()
            try:
                self._sock.sendall(line)
                reply = self._reader.readline(MAX_LINE + 2)
            except OSError as exc:
                self.close()
                raise PkiError("validation-unavailable", f"connection lost: {exc}") from None
            if not reply:
                self.close()
                raise PkiError("validation-unavailable", "connection closed by service")
            return reply

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._reader.close()
                self._sock.close()
            finally:
                self._sock = None
                self._reader = None
