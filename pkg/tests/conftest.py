import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
CHARTS = FIXTURES / "charts"
GOLDEN = FIXTURES / "golden"


@pytest.fixture
def busybox_text() -> str:
    return (CHARTS / "busybox" / "rendered.yaml").read_text()


@pytest.fixture
def chart_dirs() -> list[Path]:
    return sorted(p for p in CHARTS.iterdir() if p.is_dir())


class _JsonHandler(BaseHTTPRequestHandler):
    """Serves canned responses from the owning server's route table."""

    def do_GET(self):
        self.server.requests.append(self.path)
        for prefix, responder in self.server.routes:
            if self.path.startswith(prefix):
                status, body = responder(self.path)
                self.send_response(status)
                if isinstance(body, (dict, list)):
                    body = json.dumps(body).encode()
                elif isinstance(body, str):
                    body = body.encode()
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)
                return
        self.send_response(404)
        self.end_headers()

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        payload = self.rfile.read(length)
        self.server.requests.append(self.path)
        for prefix, responder in self.server.post_routes:
            if self.path.startswith(prefix):
                status, body = responder(self.path, payload)
                if isinstance(body, (dict, list)):
                    body = json.dumps(body).encode()
                elif isinstance(body, str):
                    body = body.encode()
                self.send_response(status)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)
                return
        self.send_response(404)
        self.end_headers()

    def log_message(self, *args):
        pass


class FixtureHTTPServer:
    """A tiny local HTTP server tests can register routes on."""

    def __init__(self):
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), _JsonHandler)
        self.server.routes = []
        self.server.post_routes = []
        self.server.requests = []
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def route(self, prefix, responder):
        self.server.routes.append((prefix, responder))

    def post_route(self, prefix, responder):
        self.server.post_routes.append((prefix, responder))

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    @property
    def requests(self):
        return self.server.requests

    def start(self):
        self.thread.start()
        return self

    def stop(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def http_server():
    server = FixtureHTTPServer().start()
    yield server
    server.stop()
