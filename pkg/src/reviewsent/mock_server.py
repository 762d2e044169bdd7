"""Local stand-in for a chat-completion endpoint, used by tests and dry runs.

By default every request is answered with the digit found by
``keyword_responder``; a scripted list of HTTP status codes can be injected
in front of the normal replies to exercise retry handling.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable

Responder = Callable[[dict], str]


def constant_responder(answer: str) -> Responder:
    return lambda body: answer


def keyword_responder(body: dict) -> str:
    """Crude sentiment guess so the mock gives varied, deterministic labels."""
    text = body["messages"][-1]["content"].rsplit("Review:", 1)[-1].lower()
    for word, label in (("siaub", "1"), ("blog", "2"), ("vidutin", "3"), ("ger", "4"), ("puik", "5")):
        if word in text:
            return label
    return "3"


class MockChatServer:
    def __init__(self, responder: Responder = keyword_responder, statuses: list[int] | None = None,
                 host: str = "127.0.0.1", port: int = 0):
        self.responder = responder
        self.statuses = list(statuses or [])
        self.requests: list[dict] = []
        self._lock = threading.Lock()
        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                with server._lock:
                    server.requests.append(body)
                    status = server.statuses.pop(0) if server.statuses else 200
                if status != 200:
                    payload = {"error": {"message": f"mock status {status}"}}
                else:
                    payload = {
                        "id": f"mock-{len(server.requests)}",
                        "object": "chat.completion",
                        "model": body.get("model"),
                        "choices": [{"index": 0, "finish_reason": "stop",
                                     "message": {"role": "assistant", "content": server.responder(body)}}],
                    }
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, format, *args):
                pass

        self.httpd = ThreadingHTTPServer((host, port), Handler)
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    def start(self) -> "MockChatServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()

    def __enter__(self) -> "MockChatServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def main(argv=None) -> None:
    import argparse

    ap = argparse.ArgumentParser(description="serve a mock chat-completion endpoint")
    ap.add_argument("--port", type=int, default=8089)
    ap.add_argument("--answer", help="always answer with this text")
    args = ap.parse_args(argv)
    responder = constant_responder(args.answer) if args.answer else keyword_responder
    srv = MockChatServer(responder, port=args.port)
    print(srv.url, flush=True)
    try:
        srv.httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.httpd.server_close()


if __name__ == "__main__":
    main()
