from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

DATA_DIR = Path(__file__).parent / "data"


def pgm_bytes(pixels: np.ndarray, maxval: int = 255) -> bytes:
    """Assemble a binary P5 raster from 2-D integer pixel values."""
    pixels = np.asarray(pixels)
    header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n{maxval}\n".encode()
    if maxval == 255:
        return header + pixels.astype(np.uint8).tobytes()
    return header + pixels.astype(">u2").tobytes()


def ppm_bytes(pixels: np.ndarray, maxval: int = 255) -> bytes:
    """Assemble a binary P6 raster from (H, W, 3) integer pixel values."""
    pixels = np.asarray(pixels)
    header = f"P6\n{pixels.shape[1]} {pixels.shape[0]}\n{maxval}\n".encode()
    if maxval == 255:
        return header + pixels.astype(np.uint8).tobytes()
    return header + pixels.astype(">u2").tobytes()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def benchmark_table_csv() -> str:
    return (DATA_DIR / "benchmark_table.csv").read_text()
