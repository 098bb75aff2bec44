"""HTTP front for the mock VLM, speaking the chat-completions wire format."""
from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .mock_vlm import MockReplyError, MockRequest, MockVlm


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 256  # the default backlog of 5 drops bursts of concurrent clients


class MockServer:
    """Running server handle. ``log`` holds every chat request body received."""

    def __init__(self, mock: MockVlm, host: str = "127.0.0.1", port: int = 0):
        self.mock = mock
        self.log: list[dict] = []
        self._lock = threading.Lock()
        self._failures = 0
        handler = _make_handler(self)
        try:
            self.httpd = _Server((host, port), handler)
        except OSError as exc:
            raise OSError(f"cannot bind mock server to {host}:{port}: {exc}") from exc
        self._thread = threading.Thread(target=self.httpd.serve_forever, kwargs={"poll_interval": 0.05},
                                        daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}/v1"

    def fail_next(self, n: int = 1) -> None:
        """Answer the next ``n`` chat requests with HTTP 503."""
        with self._lock:
            self._failures += n

    def _take_failure(self) -> bool:
        with self._lock:
            if self._failures > 0:
                self._failures -= 1
                return True
            return False

    def _record(self, body: dict) -> None:
        with self._lock:
            self.log.append(body)

    def requests(self) -> list[dict]:
        with self._lock:
            return list(self.log)

    def shutdown(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def _make_handler(server: MockServer):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):  # keep test output quiet
            pass

        def _send(self, code: int, payload: dict) -> None:
            data = json.dumps(payload).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            if self.path.rstrip("/") in ("/health", "/v1/health", "/v1/models"):
                self._send(200, {"status": "ok", "model": server.mock.config.model_id})
            else:
                self._send(404, {"error": "not found"})

        def do_POST(self):
            if self.path.rstrip("/") not in ("/chat/completions", "/v1/chat/completions"):
                self._send(404, {"error": "not found"})
                return
            length = int(self.headers.get("Content-Length", 0))
            try:
                body = json.loads(self.rfile.read(length))
            except json.JSONDecodeError:
                self._send(400, {"error": "bad json"})
                return
            server._record(body)
            if server._take_failure():
                self._send(503, {"error": "injected failure"})
                return
            try:
                text = server.mock.reply(MockRequest.from_wire(body))
            except (MockReplyError, KeyError, ValueError) as exc:
                self._send(400, {"error": str(exc)})
                return
            self._send(200, {
                "object": "chat.completion",
                "model": body.get("model", server.mock.config.model_id),
                "choices": [{"index": 0, "finish_reason": "stop",
                             "message": {"role": "assistant", "content": text}}],
            })

    return Handler


def serve_mock(mock: MockVlm, bind_addr: tuple[str, int] = ("127.0.0.1", 0)) -> MockServer:
    return MockServer(mock, *bind_addr)
