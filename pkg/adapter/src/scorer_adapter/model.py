"""Models the adapter can serve.

The built-in toy model is a flat logistic classifier:
scores = softmax(W @ flatten(image) + b). Anything fancier plugs in as a
callable with the signature

    fn(pixels: np.ndarray) -> np.ndarray

where pixels is (N, H, W, C) float64 in [0, 1] and the result is
(N, categories); the callable must carry a `categories` int attribute so
the server can answer the handshake before seeing any image.
"""

from __future__ import annotations

import importlib

import numpy as np

from .tnsr import read_tnsr


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class ToyLogisticModel:
    """softmax(W @ flatten(I) + b) with W of shape (categories, D)."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray | None = None,
                 output: str = "probabilities"):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 2:
            raise ValueError(f"weights must be (categories, D), got {weights.shape}")
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite")
        self.weights = weights
        self.categories = weights.shape[0]
        self.bias = (
            np.zeros(self.categories) if bias is None else np.asarray(bias, dtype=np.float64).ravel()
        )
        if self.bias.shape != (self.categories,):
            raise ValueError("bias must have one entry per category")
        if output not in ("probabilities", "logits"):
            raise ValueError(f"output must be probabilities or logits, got {output!r}")
        self.output = output

    @classmethod
    def from_files(cls, weights_path, bias_path=None, output="probabilities"):
        bias = read_tnsr(bias_path) if bias_path else None
        return cls(read_tnsr(weights_path), bias, output)

    def __call__(self, pixels: np.ndarray) -> np.ndarray:
        flat = pixels.reshape(pixels.shape[0], -1)
        if flat.shape[1] != self.weights.shape[1]:
            raise ValueError(
                f"image has {flat.shape[1]} values, weights expect {self.weights.shape[1]}"
            )
        z = flat @ self.weights.T + self.bias
        return z if self.output == "logits" else softmax(z)


def load_plugin(spec: str):
    """Resolve a "package.module:callable" plugin hook."""
    module_name, sep, attr = spec.partition(":")
    if not sep:
        raise ValueError("plugin spec must look like package.module:callable")
    fn = getattr(importlib.import_module(module_name), attr)
    if not callable(fn) or not isinstance(getattr(fn, "categories", None), int):
        raise ValueError("plugin must be callable and carry an int `categories` attribute")
    return fn
