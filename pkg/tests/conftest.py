"""Shared fixtures: deterministic ZIP builders and a scripted local HTTP server."""

from __future__ import annotations

import json
import threading
import time
import zipfile
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

# Fixed DOS timestamp so fixture archives are byte-identical across builds.
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def build_zip(path: Path, files: dict[str, str | bytes]) -> Path:
    """Write a ZIP with deterministic member metadata."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w") as zf:
        for name in sorted(files):
            data = files[name]
            if isinstance(data, str):
                data = data.encode("utf-8")
            info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
            zf.writestr(info, data)
    return path


def zip_from_dir(path: Path, src_dir: Path) -> Path:
    files = {
        str(p.relative_to(src_dir)): p.read_bytes()
        for p in sorted(src_dir.rglob("*")) if p.is_file()
    }
    return build_zip(path, files)


class ScriptedHTTPServer:
    """Local HTTP server replaying scripted (status, body) responses in order.

    A scripted body may be a dict (sent as JSON), a raw string, a callable
    taking the request payload and returning the body, or the marker
    ("sleep", seconds) to stall before answering 200 {} — used to provoke
    client timeouts. When the script is exhausted, ``default`` answers.
    """

    def __init__(self):
        self.script: list[tuple[int, object]] = []
        self.default: tuple[int, object] = (200, {})
        self.requests: list[dict] = []
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (http.server API)
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                try:
                    payload = json.loads(raw) if raw else {}
                except ValueError:
                    payload = {"_raw": raw.decode("utf-8", "replace")}
                with outer._lock:
                    outer.requests.append(payload)
                    status, body = outer.script.pop(0) if outer.script else outer.default
                if isinstance(body, tuple) and body and body[0] == "sleep":
                    time.sleep(body[1])
                    status, body = 200, {}
                elif callable(body):
                    body = body(payload)
                data = body if isinstance(body, str) else json.dumps(body)
                encoded = data.encode("utf-8")
                try:
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(encoded)))
                    self.end_headers()
                    self.wfile.write(encoded)
                except BrokenPipeError:
                    pass  # client gave up (timeout tests)

            def log_message(self, *args):  # silence request logging
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/"

    def start(self):
        self._thread.start()

    def stop(self):
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def http_server():
    server = ScriptedHTTPServer()
    server.start()
    yield server
    server.stop()
