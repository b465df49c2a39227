"""A local scoring endpoint for tests and demos.

``MockScoringServer`` listens on 127.0.0.1 and answers JSON POSTs with
``{"score": s}``.  The text is the first string found in the request body and
the default score is a digest of it, so the server needs no model.  It
records every request and can inject failures.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Optional


def digest_score(text: str) -> float:
    """Deterministic pseudo-score in [0, 1)."""
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big") / 2**64


def first_string(node) -> Optional[str]:
    if isinstance(node, str):
        return node
    if isinstance(node, Mapping):
        node = list(node.values())
    if isinstance(node, list):
        for v in node:
            s = first_string(v)
            if s is not None:
                return s
    return None


@dataclass(frozen=True)
class RecordedCall:
    at: float
    text: Optional[str]
    headers: Mapping[str, str]
    status: int


class MockScoringServer:
    """Threaded HTTP scoring server.

    ``api_key``
        When set, requests must carry ``Authorization: Bearer <api_key>``
        or get 401.
    ``fail_first``
        Status codes returned, in order, by the first requests.
    ``fail_texts``
        Text to status code, returned on every request for that text.
    ``respond``
        Maps ``(text, score)`` to the JSON response body.
    """

    def __init__(
        self,
        score_fn: Callable[[str], Any] = digest_score,
        *,
        api_key: Optional[str] = None,
        fail_first: Iterable[int] = (),
        fail_texts: Optional[Mapping[str, int]] = None,
        respond: Callable[[str, Any], Any] = lambda text, score: {"score": score},
    ):
        self.score_fn = score_fn
        self.api_key = api_key
        self.fail_first = list(fail_first)
        self.fail_texts = dict(fail_texts or {})
        self.respond = respond
        self.calls: list[RecordedCall] = []
        self._lock = threading.Lock()
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._handler())
        self._server.daemon_threads = True
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/score"

    def _decide(self, text: Optional[str], headers: Mapping[str, str]) -> tuple[int, Any]:
        with self._lock:
            if self.api_key is not None and headers.get("Authorization") != f"Bearer {self.api_key}":
                status, body = 401, {"error": "unauthorized"}
            elif self.fail_first:
                status, body = self.fail_first.pop(0), {"error": "injected"}
            elif text in self.fail_texts:
                status, body = self.fail_texts[text], {"error": "injected"}
            elif text is None:
                status, body = 400, {"error": "no text"}
            else:
                status, body = 200, self.respond(text, self.score_fn(text))
            self.calls.append(RecordedCall(time.monotonic(), text, dict(headers), status))
        return status, body

    def _handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                try:
                    payload = json.loads(self.rfile.read(length) or b"null")
                except ValueError:
                    payload = None
                status, body = server._decide(first_string(payload), self.headers)
                data = json.dumps(body).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        return Handler

    def start(self) -> "MockScoringServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self) -> "MockScoringServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def successful_calls(self) -> list[RecordedCall]:
        return [c for c in self.calls if c.status == 200]
