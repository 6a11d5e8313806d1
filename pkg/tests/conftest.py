import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest

from storyframes.backend import MockBackend
from storyframes.image_ops import RasterImage
from storyframes.translator import MockTranslator, Translator

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def spider_lines():
    return (DATA / "spider_he.txt").read_text(encoding="utf-8").splitlines()


@pytest.fixture
def spider_translator():
    return Translator(MockTranslator.from_json(DATA / "spider_table.json"), source_lang="he")


@pytest.fixture
def mock_backend():
    return MockBackend()


@pytest.fixture
def rng():
    return np.random.default_rng(20240117)


def random_image(rng, width=64, height=64) -> RasterImage:
    px = rng.integers(0, 256, size=(height, width, 4), dtype=np.uint8)
    px[..., 3] = 255
    return RasterImage(px)


# -- tiny HTTP stub ------------------------------------------------------------------

class StubServer:
    """Local HTTP server with per-path handlers.

    A handler receives ``(method, path, headers, body)`` and returns
    ``(status, headers, body_bytes)``.  Every request is appended to
    ``requests``.
    """

    def __init__(self):
        self.routes = {}
        self.requests = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def _dispatch(self):
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length) if length else b""
                path = self.path.split("?", 1)[0]
                stub.requests.append((self.command, self.path, dict(self.headers), body))
                handler = stub.routes.get(path)
                if handler is None:
                    status, headers, payload = 404, {}, b"not found"
                else:
                    status, headers, payload = handler(self.command, self.path, self.headers, body)
                self.send_response(status)
                for k, v in headers.items():
                    self.send_header(k, v)
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            do_GET = do_POST = _dispatch

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True)
        self.thread.start()

    @property
    def url(self):
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    def json_route(self, path, payload, status=200, headers=None):
        body = json.dumps(payload).encode("utf-8")
        hdrs = {"Content-Type": "application/json", **(headers or {})}
        self.routes[path] = lambda *a: (status, hdrs, body)

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def http_stub():
    stub = StubServer()
    yield stub
    stub.close()


# -- acceptance report ---------------------------------------------------------------

_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE.append((props["criterion"], report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, duration in sorted(_ACCEPTANCE, key=lambda r: int(r[0].split()[0][2:])):
        verdict = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{verdict:4}  {name}  ({duration:.2f}s)")
