"""NDJSON scoring server.

One JSON object per line. The engine opens with
{"op": "hello", "version": 1}; the server replies with its capabilities and
then answers score / score_batch requests. A request that cannot be decoded
gets an error reply carrying whatever id could be recovered, and the
connection stays up.
"""

from __future__ import annotations

import base64
import json
import socketserver
import sys
from dataclasses import dataclass

import numpy as np

PROTOCOL_VERSION = 1


@dataclass
class AdapterConfig:
    """model is a callable (N, H, W, C) -> (N, categories) with a
    `categories` attribute; output declares what the numbers mean."""

    model: object
    output: str = "probabilities"
    transport: str = "stdio"
    port: int = 0
    batch: bool = True

    def __post_init__(self):
        if self.output not in ("probabilities", "logits"):
            raise ValueError(f"output must be probabilities or logits, got {self.output!r}")
        if self.transport not in ("stdio", "tcp"):
            raise ValueError(f"transport must be stdio or tcp, got {self.transport!r}")


def _decode_pixels(request: dict) -> np.ndarray:
    shape = request.get("shape")
    op = request.get("op")
    expected_ndim = 4 if op == "score_batch" else 3
    if (
        not isinstance(shape, list)
        or len(shape) != expected_ndim
        or not all(isinstance(d, int) and d > 0 for d in shape)
    ):
        raise ValueError(f"bad shape for {op}: {shape!r}")
    if request.get("dtype") != "f32":
        raise ValueError(f"unsupported dtype {request.get('dtype')!r}")
    try:
        raw = base64.b64decode(request.get("data", ""), validate=True)
    except Exception as exc:
        raise ValueError(f"undecodable data field: {exc}") from exc
    count = int(np.prod(shape))
    if len(raw) != 4 * count:
        raise ValueError(f"data holds {len(raw)} bytes, shape promises {4 * count}")
    pixels = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
    if op == "score":
        pixels = pixels[None, ...]
    return pixels


def handle_line(line: str, config: AdapterConfig) -> dict:
    """Turn one request line into one reply object (never raises)."""
    try:
        request = json.loads(line)
        if not isinstance(request, dict):
            raise ValueError("request is not a JSON object")
    except (json.JSONDecodeError, ValueError) as exc:
        return {"id": None, "error": f"malformed request: {exc}"}
    rid = request.get("id")
    if request.get("op") == "hello":
        return {
            "version": PROTOCOL_VERSION,
            "categories": int(config.model.categories),
            "output": config.output,
            "batch": config.batch,
        }
    try:
        if request.get("op") not in ("score", "score_batch"):
            raise ValueError(f"unknown op {request.get('op')!r}")
        if request.get("op") == "score_batch" and not config.batch:
            raise ValueError("batch scoring is disabled")
        pixels = _decode_pixels(request)
        scores = np.asarray(config.model(pixels), dtype=np.float64)
        return {"id": rid, "scores": scores.tolist()}
    except Exception as exc:
        return {"id": rid, "error": str(exc)}


def serve_stream(rfile, wfile, config: AdapterConfig) -> None:
    """Answer requests from rfile on wfile until EOF."""
    for line in rfile:
        line = line.strip()
        if not line:
            continue
        reply = json.dumps(handle_line(line, config)) + "\n"
        wfile.write(reply)
        wfile.flush()


class _TcpHandler(socketserver.StreamRequestHandler):
    def handle(self):
        reader = self.rfile
        config = self.server.adapter_config

        class _Writer:
            def write(inner, text):
                self.wfile.write(text.encode("utf-8"))

            def flush(inner):
                self.wfile.flush()

        serve_stream((raw.decode("utf-8") for raw in reader), _Writer(), config)


class TcpAdapterServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, config: AdapterConfig, host: str = "127.0.0.1"):
        super().__init__((host, config.port), _TcpHandler)
        self.adapter_config = config


def serve(config: AdapterConfig) -> None:
    """Run until EOF (stdio) or interrupt (tcp)."""
    if config.transport == "stdio":
        serve_stream(sys.stdin, sys.stdout, config)
        return
    with TcpAdapterServer(config) as server:
        host, port = server.server_address
        print(f"listening on {host}:{port}", file=sys.stderr, flush=True)
        server.serve_forever()
