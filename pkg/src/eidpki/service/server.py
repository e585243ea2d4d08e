"""Threaded TCP front end for the authority's line protocol."""

from __future__ import annotations

import logging
import socketserver
import threading

from eidpki.errors import PkiError
from eidpki.service.authority import Authority
from eidpki.service.handlers import handle_line
from eidpki.service.wire import MAX_LINE, encode_response, error_body

log = logging.getLogger(__name__)


class _LineHandler(socketserver.StreamRequestHandler):
    server: "ServiceServer"

    def handle(self) -> None:
        while True:
            line = self.rfile.readline(MAX_LINE + 1)
            if not line:
                return
            if len(line) > MAX_LINE:
                # the rest of the line is unread, so the stream cannot resync
                self.wfile.write(encode_response(False, error_body(PkiError("too-large", f"limit {MAX_LINE}"))))
                return
            if not line.strip():
                continue
            self.wfile.write(handle_line(self.server.authority, line))
            self.wfile.flush()


class ServiceServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, authority: Authority, host: str = "127.0.0.1", port: int = 0) -> None:
        super().__init__((host, port), _LineHandler)
        self.authority = authority

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, name="eidpki-server", daemon=True)
        thread.start()
        log.info("serving on %s", self.address)
        return thread
