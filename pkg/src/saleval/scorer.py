"""Black-box scorer abstraction: a model is anything that maps an image to a
per-category probability vector.

Builtins (constant / logistic2 / linear) serve as deterministic oracles;
external models are reached over a newline-delimited JSON protocol via a
child process or a TCP stream.
"""

from __future__ import annotations

import base64
import hashlib
import json
import queue
import shlex
import socket
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    MalformedResponseError,
    ScorerProtocolError,
    ScorerTimeoutError,
)
from .tensors import ImageTensor, read_tnsr

PROTOCOL_VERSION = 1
DEFAULT_BATCH_SIZE = 32
DEFAULT_TIMEOUT = 30.0

_PROB_TOL = 1e-6


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def validate_score_vector(v: np.ndarray) -> np.ndarray:
    """Check the probability-vector invariants: finite, in [0,1], sum 1."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise MalformedResponseError(f"score vector must be 1-D and non-empty, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise MalformedResponseError("score vector contains non-finite values")
    if v.min() < -_PROB_TOL or v.max() > 1.0 + _PROB_TOL:
        raise MalformedResponseError("scores outside [0, 1]")
    if abs(float(v.sum()) - 1.0) > _PROB_TOL:
        raise MalformedResponseError(f"scores sum to {v.sum()}, expected 1")
    return v


def predicted_category(v: np.ndarray) -> int:
    """Index of the maximum score; ties resolve to the lowest index."""
    v = np.asarray(v)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("score vector must be 1-D and non-empty")
    return int(np.argmax(v))


def _stack(images) -> np.ndarray:
    arrs = [img.data for img in images]
    shape = arrs[0].shape
    for a in arrs:
        if a.shape != shape:
            raise DimensionMismatchError("batch images must share one shape")
    return np.stack(arrs)


class ConstantScorer:
    """Returns one fixed probability vector for every image."""

    def __init__(self, vector):
        self.vector = validate_score_vector(np.asarray(vector, dtype=np.float64))
        self.categories = self.vector.size
        self.scorer_id = "builtin:constant:" + ",".join(repr(x) for x in self.vector)

    def score(self, image: ImageTensor) -> np.ndarray:
        return self.vector.copy()

    def score_batch(self, images) -> np.ndarray:
        return np.tile(self.vector, (len(images), 1))


class Logistic2Scorer:
    """Two-category logistic model: p(category 1) = sigmoid(sum(w * I) + b).

    Weights may be (H, W), broadcast over channels, or (H, W, C).
    """

    def __init__(self, weights: np.ndarray, bias: float = 0.0):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim not in (2, 3):
            raise ValueError(f"weights must be 2-D or 3-D, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        self.weights = w
        self.bias = float(bias)
        self.categories = 2
        digest = hashlib.sha256(w.tobytes() + repr(self.bias).encode()).hexdigest()[:12]
        self.scorer_id = f"builtin:logistic2:{digest}"

    def _weight_tensor(self, shape_hwc) -> np.ndarray:
        w = self.weights if self.weights.ndim == 3 else self.weights[:, :, None]
        if w.shape[:2] != tuple(shape_hwc[:2]) or w.shape[2] not in (1, shape_hwc[2]):
            raise DimensionMismatchError(
                f"weights {self.weights.shape} incompatible with image shape {tuple(shape_hwc)}"
            )
        return np.broadcast_to(w, tuple(shape_hwc))

    def score(self, image: ImageTensor) -> np.ndarray:
        w = self._weight_tensor(image.data.shape)
        z = float((image.data * w).sum()) + self.bias
        p1 = 1.0 / (1.0 + np.exp(-z))
        return np.array([1.0 - p1, p1])

    def score_batch(self, images) -> np.ndarray:
        pixels = _stack(images)
        w = self._weight_tensor(pixels.shape[1:])
        z = (pixels * w).sum(axis=(1, 2, 3)) + self.bias
        p1 = 1.0 / (1.0 + np.exp(-z))
        return np.stack([1.0 - p1, p1], axis=1)


class LinearScorer:
    """Per-category linear model: logit_c = sum(w_c * I) + b_c.

    With presoftmax=True the raw linear outputs are returned instead of
    softmax probabilities; block deletions then shift the tracked score by
    exactly the deleted weight-intensity sum, which the metric oracles rely
    on.
    """

    def __init__(self, weights: np.ndarray, biases=None, presoftmax: bool = False):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 4:
            raise ValueError(f"weights must be (categories, H, W, C), got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        self.weights = w
        self.categories = w.shape[0]
        self.biases = (
            np.zeros(self.categories)
            if biases is None
            else np.asarray(biases, dtype=np.float64)
        )
        if self.biases.shape != (self.categories,):
            raise ValueError("biases must have one entry per category")
        self.presoftmax = presoftmax
        digest = hashlib.sha256(w.tobytes() + self.biases.tobytes()).hexdigest()[:12]
        mode = "presoftmax" if presoftmax else "softmax"
        self.scorer_id = f"builtin:linear:{digest}:{mode}"

    def _logits(self, pixels: np.ndarray) -> np.ndarray:
        w = self.weights
        if w.shape[1:3] != pixels.shape[-3:-1] or w.shape[3] not in (1, pixels.shape[-1]):
            raise DimensionMismatchError(
                f"weights {self.weights.shape} incompatible with image {pixels.shape[-3:]}"
            )
        if w.shape[3] != pixels.shape[-1]:
            w = np.broadcast_to(w, (w.shape[0], *pixels.shape[-3:]))
        return np.tensordot(pixels, w, axes=([-3, -2, -1], [1, 2, 3])) + self.biases

    def score(self, image: ImageTensor) -> np.ndarray:
        z = self._logits(image.data)
        return z if self.presoftmax else softmax(z)

    def score_batch(self, images) -> np.ndarray:
        z = self._logits(_stack(images))
        return z if self.presoftmax else softmax(z)


# ---------------------------------------------------------------------------
# Wire protocol client
# ---------------------------------------------------------------------------


def encode_pixels(pixels: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(pixels, dtype="<f4").tobytes()).decode("ascii")


class _LineChannel:
    """Newline-delimited JSON over a file pair, with a reader thread so
    receives can time out without blocking the caller forever."""

    def __init__(self, reader, writer):
        self._writer = writer
        self._lines: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._pump, args=(reader,), daemon=True)
        self._thread.start()

    def _pump(self, reader):
        try:
            for line in reader:
                self._lines.put(line)
        except (OSError, ValueError):
            pass
        self._lines.put(None)

    def send(self, obj: dict) -> None:
        try:
            self._writer.write(json.dumps(obj) + "\n")
            self._writer.flush()
        except (OSError, ValueError, BrokenPipeError) as exc:
            raise ScorerProtocolError(f"failed to send request: {exc}") from exc

    def recv(self, timeout: float) -> dict:
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise ScorerTimeoutError(f"no response within {timeout} s") from None
        if line is None:
            raise ScorerProtocolError("connection closed by scorer")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedResponseError(f"response is not valid JSON: {line!r}") from exc
        if not isinstance(obj, dict):
            raise MalformedResponseError(f"response is not an object: {obj!r}")
        return obj


class ProtocolScorer:
    """Client for external scorers speaking the NDJSON scoring protocol.

    One request is in flight per connection; replies are matched by id so a
    well-behaved scorer may still answer out of order.
    """

    def __init__(self, channel: _LineChannel, scorer_id: str, *,
                 timeout: float = DEFAULT_TIMEOUT, batch_size: int = DEFAULT_BATCH_SIZE,
                 closer=None):
        self._channel = channel
        self._timeout = timeout
        self._batch_size = batch_size
        self._closer = closer
        self._lock = threading.Lock()
        self._next_id = 0
        self._pending: dict[int, dict] = {}
        self.scorer_id = scorer_id
        self._handshake()

    @classmethod
    def from_command(cls, argv, **kwargs) -> "ProtocolScorer":
        proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        channel = _LineChannel(proc.stdout, proc.stdin)

        def closer():
            try:
                proc.stdin.close()
            except OSError:
                pass
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()

        return cls(channel, "cmd:" + " ".join(argv), closer=closer, **kwargs)

    @classmethod
    def from_tcp(cls, host: str, port: int, **kwargs) -> "ProtocolScorer":
        sock = socket.create_connection((host, port), timeout=kwargs.get("timeout", DEFAULT_TIMEOUT))
        sock.settimeout(None)
        reader = sock.makefile("r", encoding="utf-8", newline="\n")
        writer = sock.makefile("w", encoding="utf-8", newline="\n")
        channel = _LineChannel(reader, writer)

        def closer():
            # Unblock the pump thread before touching the file objects:
            # closing a makefile() someone is reading deadlocks on its lock.
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            for stream in (writer, reader):
                try:
                    stream.close()
                except OSError:
                    pass
            sock.close()

        return cls(channel, f"tcp:{host}:{port}", closer=closer, **kwargs)

    def _handshake(self) -> None:
        self._channel.send({"op": "hello", "version": PROTOCOL_VERSION})
        reply = self._channel.recv(self._timeout)
        if reply.get("version") != PROTOCOL_VERSION:
            raise ScorerProtocolError(f"scorer speaks version {reply.get('version')!r}")
        categories = reply.get("categories")
        if not isinstance(categories, int) or categories < 1:
            raise ScorerProtocolError(f"bad categories in handshake: {categories!r}")
        output = reply.get("output")
        if output not in ("probabilities", "logits"):
            raise ScorerProtocolError(f"bad output kind in handshake: {output!r}")
        self.categories = categories
        self.output = output
        self.batch_capable = bool(reply.get("batch", False))

    def close(self) -> None:
        if self._closer is not None:
            self._closer()
            self._closer = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _roundtrip(self, request: dict) -> dict:
        rid = request["id"]
        self._channel.send(request)
        deadline_budget = self._timeout
        while True:
            reply = self._channel.recv(deadline_budget)
            got = reply.get("id")
            if got == rid:
                return reply
            if isinstance(got, int):
                self._pending[got] = reply
            else:
                raise MalformedResponseError(f"response without usable id: {reply!r}")
            if rid in self._pending:
                return self._pending.pop(rid)

    def _decode_scores(self, reply: dict, expected_n: int) -> np.ndarray:
        if "error" in reply:
            raise ScorerProtocolError(f"scorer error: {reply['error']}")
        scores = reply.get("scores")
        if not isinstance(scores, list) or len(scores) != expected_n:
            raise MalformedResponseError(
                f"expected {expected_n} score vectors, got {scores!r}"
            )
        try:
            arr = np.asarray(scores, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise MalformedResponseError(f"non-numeric scores: {scores!r}") from exc
        if arr.ndim != 2 or arr.shape[1] != self.categories:
            raise MalformedResponseError(
                f"score vectors must have {self.categories} entries, got shape {arr.shape}"
            )
        if self.output == "logits":
            if not np.all(np.isfinite(arr)):
                raise MalformedResponseError("logits contain non-finite values")
            arr = softmax(arr)
        for row in arr:
            validate_score_vector(row)
        return arr

    def score(self, image: ImageTensor) -> np.ndarray:
        with self._lock:
            self._next_id += 1
            request = {
                "id": self._next_id,
                "op": "score",
                "shape": list(image.data.shape),
                "dtype": "f32",
                "data": encode_pixels(image.data),
            }
            reply = self._roundtrip(request)
        return self._decode_scores(reply, 1)[0]

    def score_batch(self, images) -> np.ndarray:
        chunks = []
        for start in range(0, len(images), self._batch_size):
            chunk = list(images[start : start + self._batch_size])
            if self.batch_capable and len(chunk) > 1:
                pixels = _stack(chunk)
                with self._lock:
                    self._next_id += 1
                    request = {
                        "id": self._next_id,
                        "op": "score_batch",
                        "shape": list(pixels.shape),
                        "dtype": "f32",
                        "data": encode_pixels(pixels),
                    }
                    reply = self._roundtrip(request)
                chunks.append(self._decode_scores(reply, len(chunk)))
            else:
                chunks.append(np.stack([self.score(img) for img in chunk]))
        return np.concatenate(chunks)


# ---------------------------------------------------------------------------
# Scorer specs (CLI / config surface)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScorerSpec:
    """Parsed description of how to obtain a scorer.

    Text forms:
      builtin:constant:<p1,p2,...>
      builtin:logistic2:<weights.tnsr>[:<bias>]
      builtin:linear:<cat0.tnsr>,<cat1.tnsr>,...   (one weight tensor per category)
      cmd:<command line>
      tcp:<host>:<port>
    """

    kind: str
    params: tuple
    output: str = "probabilities"

    @classmethod
    def parse(cls, text: str) -> "ScorerSpec":
        if text.startswith("builtin:constant:"):
            payload = text[len("builtin:constant:") :]
            try:
                vector = tuple(float(x) for x in payload.split(","))
            except ValueError:
                raise ValueError(f"bad constant vector: {payload!r}") from None
            return cls(kind="builtin-constant", params=vector)
        if text.startswith("builtin:logistic2:"):
            payload = text[len("builtin:logistic2:") :]
            bias = 0.0
            path = payload
            if ":" in payload:
                head, tail = payload.rsplit(":", 1)
                try:
                    bias = float(tail)
                    path = head
                except ValueError:
                    pass
            if not path:
                raise ValueError("logistic2 spec needs a weights path")
            return cls(kind="builtin-logistic2", params=(path, bias))
        if text.startswith("builtin:linear:"):
            paths = tuple(p for p in text[len("builtin:linear:") :].split(",") if p)
            if len(paths) < 2:
                raise ValueError("linear spec needs one weights path per category (>= 2)")
            return cls(kind="builtin-linear", params=paths)
        if text.startswith("cmd:"):
            argv = tuple(shlex.split(text[len("cmd:") :]))
            if not argv:
                raise ValueError("cmd spec needs a command line")
            return cls(kind="external-subprocess", params=argv)
        if text.startswith("tcp:"):
            payload = text[len("tcp:") :]
            host, sep, port = payload.rpartition(":")
            if not sep or not host:
                raise ValueError(f"tcp spec must be tcp:<host>:<port>, got {text!r}")
            try:
                port_num = int(port)
            except ValueError:
                raise ValueError(f"bad tcp port: {port!r}") from None
            return cls(kind="external-tcp", params=(host, port_num))
        raise ValueError(f"unrecognized scorer spec: {text!r}")

    def build(self, *, timeout: float = DEFAULT_TIMEOUT, batch_size: int = DEFAULT_BATCH_SIZE):
        if self.kind == "builtin-constant":
            return ConstantScorer(np.array(self.params))
        if self.kind == "builtin-logistic2":
            path, bias = self.params
            weights = read_tnsr(path)
            return Logistic2Scorer(weights.data, bias=bias)
        if self.kind == "builtin-linear":
            grids = []
            for path in self.params:
                arr = read_tnsr(path).data
                grids.append(arr[:, :, None] if arr.ndim == 2 else arr)
            return LinearScorer(np.stack(grids))
        if self.kind == "external-subprocess":
            return ProtocolScorer.from_command(list(self.params), timeout=timeout, batch_size=batch_size)
        if self.kind == "external-tcp":
            host, port = self.params
            return ProtocolScorer.from_tcp(host, port, timeout=timeout, batch_size=batch_size)
        raise ValueError(f"cannot build scorer kind {self.kind!r}")
