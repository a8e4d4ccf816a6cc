"""Loopback HTTP transport so nodes in separate processes can talk.

The wire body is the canonical envelope; the response body is the
canonical ack. Only the transport changes, every node contract is the same
as in-process.
"""

from __future__ import annotations

import threading
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from opennet.errors import MalformedDocument, Undeliverable
from opennet.node import Ack, Receiver

CONTENT_TYPE = "application/json"


class HttpTransport:
    def __init__(self, timeout: float = 5.0) -> None:
        self.timeout = timeout

    def request(self, sender: str, endpoint: str, data: bytes) -> Ack:
        req = urllib.request.Request(endpoint, data=data, method="POST",
                                     headers={"Content-Type": CONTENT_TYPE, "X-Subscriber": sender})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = resp.read()
        except urllib.error.HTTPError as exc:
            body = exc.read()
        except (urllib.error.URLError, OSError) as exc:
            reason = getattr(exc, "reason", exc)
            refused = isinstance(reason, ConnectionRefusedError)
            raise Undeliverable(f"{endpoint}: {exc}", in_doubt=not refused) from None
        try:
            return Ack.decode(body)
        except (MalformedDocument, KeyError, ValueError):
            raise Undeliverable(f"{endpoint}: unreadable ack", in_doubt=True) from None


def _handler(receiver: Receiver):
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self) -> None:
            length = int(self.headers.get("Content-Length", 0))
            ack = receiver.receive(self.rfile.read(length))
            body = ack.encode()
            self.send_response(200 if ack.ok else 400)
            self.send_header("Content-Type", CONTENT_TYPE)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, fmt, *args) -> None:  # keep stderr quiet
            pass

    return Handler


class LoopbackServer:
    """Serve one receiver on 127.0.0.1; ``port=0`` picks a free port."""

    def __init__(self, receiver: Receiver, port: int = 0, host: str = "127.0.0.1") -> None:
        self.httpd = ThreadingHTTPServer((host, port), _handler(receiver))
        self._thread: Optional[threading.Thread] = None

    @property
    def endpoint(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}/"

    def start(self) -> "LoopbackServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
