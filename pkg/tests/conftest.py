"""Shared fixtures: hand-rolled Y4M synthesis and tiny image writers.

The Y4M builder here is intentionally independent of the package's parser so
round-trip tests check the parser against the wire format, not against
itself.
"""

from __future__ import annotations

import http.server
import json
import threading
from pathlib import Path

import numpy as np
import pytest

CHROMA_FACTORS = {"420": (2, 2), "422": (2, 1), "444": (1, 1)}


def chroma_plane_size(width: int, height: int, chroma: str) -> int:
    sx, sy = CHROMA_FACTORS[chroma]
    return (width // sx) * (height // sy)


def synth_y4m(
    width: int,
    height: int,
    lumas: list[bytes],
    fps: tuple[int, int] = (25, 1),
    chroma: str = "420",
    chroma_fill: bytes | None = None,
    header_extra: str = "",
    frame_extra: str = "",
) -> bytes:
    """Compose a Y4M byte stream by hand from luma planes."""
    out = bytearray()
    out += f"YUV4MPEG2 W{width} H{height} F{fps[0]}:{fps[1]} C{chroma}{header_extra}\n".encode()
    csize = chroma_plane_size(width, height, chroma)
    for luma in lumas:
        assert len(luma) == width * height
        out += f"FRAME{frame_extra}\n".encode()
        out += luma
        if chroma_fill is None:
            out += b"\x80" * (2 * csize)
        else:
            assert len(chroma_fill) == 2 * csize
            out += chroma_fill
    return bytes(out)


def synth_y4m_random(rng: np.random.Generator, width, height, n_frames, fps=(25, 1), chroma="420"):
    """Random lumas and random (per-frame) chroma bytes; returns (bytes, lumas)."""
    lumas = [rng.integers(0, 256, width * height, dtype=np.uint8).tobytes() for _ in range(n_frames)]
    csize = chroma_plane_size(width, height, chroma)
    out = bytearray()
    out += f"YUV4MPEG2 W{width} H{height} F{fps[0]}:{fps[1]} C{chroma}\n".encode()
    for luma in lumas:
        out += b"FRAME\n" + luma
        out += rng.integers(0, 256, 2 * csize, dtype=np.uint8).tobytes()
    return bytes(out), lumas


def write_ppm(path: Path, pixels: list[list[tuple[int, int, int]]]) -> None:
    """Plain-bytes P6 writer, independent of Pillow."""
    height = len(pixels)
    width = len(pixels[0])
    body = bytearray(f"P6\n{width} {height}\n255\n".encode())
    for row in pixels:
        for r, g, b in row:
            body += bytes((r, g, b))
    path.write_bytes(bytes(body))


def write_png_gray(path: Path, rows: list[list[int]]) -> None:
    from PIL import Image

    arr = np.asarray(rows, dtype=np.uint8)
    Image.fromarray(arr, mode="L").save(path)


class _Handler(http.server.BaseHTTPRequestHandler):
    def do_POST(self):  # noqa: N802
        length = int(self.headers.get("Content-Length", 0))
        request = json.loads(self.rfile.read(length).decode("utf-8"))
        self.server.requests.append((self.path, request))
        status, payload = self.server.responder(self.path, request)
        body = payload if isinstance(payload, bytes) else json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


class LocalBackendServer:
    """Threaded HTTP server whose response logic is a pluggable callable."""

    def __init__(self, responder):
        self._httpd = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
        self._httpd.responder = responder
        self._httpd.requests = []
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    @property
    def endpoint(self) -> str:
        host, port = self._httpd.server_address
        return f"http://{host}:{port}"

    @property
    def requests(self):
        return self._httpd.requests

    def close(self):
        self._httpd.shutdown()
        self._httpd.server_close()


@pytest.fixture
def backend_server():
    servers = []

    def start(responder):
        server = LocalBackendServer(responder)
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.close()
