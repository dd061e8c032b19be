"""Randomized-mask saliency estimation: the one generator in this toolkit
that needs nothing but black-box scores.

Each mask starts as a low-resolution Bernoulli keep/drop grid, is
bilinearly upsampled, and is cropped at a random sub-cell shift; the
saliency map is the score-weighted average of the masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scorer import predicted_category
from .tensors import ImageTensor, SaliencyMap

_CHUNK = 256


@dataclass(frozen=True)
class RiseConfig:
    """Mask-sampling parameters; defaults follow the common 4000-mask,
    7x7-grid setting."""

    mask_count: int = 4000
    grid_size: int = 7
    keep_probability: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.mask_count < 1:
            raise ValueError("mask_count must be >= 1")
        if self.grid_size < 1:
            raise ValueError("grid_size must be >= 1")
        if not (0.0 < self.keep_probability < 1.0):
            raise ValueError("keep_probability must be strictly between 0 and 1")


def _bilinear_sample(grids: np.ndarray, row_coords: np.ndarray, col_coords: np.ndarray) -> np.ndarray:
    """Sample a batch of 2-D grids at per-grid fractional coordinates.

    grids: (N, g, g); row_coords: (N, H); col_coords: (N, W) -> (N, H, W).
    """
    n, g, _ = grids.shape
    rows = np.clip(row_coords, 0.0, g - 1.0)
    cols = np.clip(col_coords, 0.0, g - 1.0)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, g - 1)
    c1 = np.minimum(c0 + 1, g - 1)
    fr = (rows - r0)[:, :, None]
    fc = (cols - c0)[:, None, :]
    idx = np.arange(n)[:, None, None]
    top = grids[idx, r0[:, :, None], c0[:, None, :]] * (1 - fc) + grids[
        idx, r0[:, :, None], c1[:, None, :]
    ] * fc
    bot = grids[idx, r1[:, :, None], c0[:, None, :]] * (1 - fc) + grids[
        idx, r1[:, :, None], c1[:, None, :]
    ] * fc
    return top * (1 - fr) + bot * fr


def _mask_batch(grids: np.ndarray, shifts: np.ndarray, height: int, width: int,
                grid_size: int) -> np.ndarray:
    """Materialize masks from keep/drop grids and per-mask crop shifts."""
    cell_h = math.ceil(height / grid_size)
    cell_w = math.ceil(width / grid_size)
    up_h = (grid_size + 1) * cell_h
    up_w = (grid_size + 1) * cell_w
    # Position i of the crop samples the upsampled grid at i + shift; the
    # upsample maps output pixel u to grid coordinate (u + 0.5)*g/up - 0.5.
    base_rows = np.arange(height)[None, :] + shifts[:, 0][:, None]
    base_cols = np.arange(width)[None, :] + shifts[:, 1][:, None]
    row_coords = (base_rows + 0.5) * (grid_size / up_h) - 0.5
    col_coords = (base_cols + 0.5) * (grid_size / up_w) - 0.5
    return _bilinear_sample(grids, row_coords, col_coords)


def _draw(cfg: RiseConfig, height: int, width: int):
    """Draw every random quantity up front so chunked generation is
    independent of chunk size."""
    rng = np.random.default_rng(cfg.seed)
    grids = (
        rng.random((cfg.mask_count, cfg.grid_size, cfg.grid_size))
        < cfg.keep_probability
    ).astype(np.float64)
    cell_h = math.ceil(height / cfg.grid_size)
    cell_w = math.ceil(width / cfg.grid_size)
    shifts = np.stack(
        [
            rng.integers(0, cell_h, size=cfg.mask_count),
            rng.integers(0, cell_w, size=cfg.mask_count),
        ],
        axis=1,
    ).astype(np.float64)
    return grids, shifts


def generate_rise_masks(cfg: RiseConfig, height: int, width: int) -> np.ndarray:
    """All N masks as an (N, H, W) array with values in [0, 1];
    deterministic for a given seed."""
    grids, shifts = _draw(cfg, height, width)
    chunks = [
        _mask_batch(grids[i : i + _CHUNK], shifts[i : i + _CHUNK], height, width, cfg.grid_size)
        for i in range(0, cfg.mask_count, _CHUNK)
    ]
    return np.concatenate(chunks)


def rise_saliency(
    image: ImageTensor,
    scorer,
    category: int | None = None,
    cfg: RiseConfig | None = None,
) -> SaliencyMap:
    """Score-weighted mask average: (1 / (N p)) * sum_n c(I * M_n) * M_n.

    The tracked category defaults to the argmax on the unmasked image.
    Masks are generated and scored in fixed-size chunks with a fixed
    reduction order, so results depend only on the config.
    """
    cfg = cfg or RiseConfig()
    if category is None:
        category = predicted_category(np.asarray(scorer.score(image)))
    grids, shifts = _draw(cfg, image.height, image.width)
    accum = np.zeros((image.height, image.width))
    for start in range(0, cfg.mask_count, _CHUNK):
        masks = _mask_batch(
            grids[start : start + _CHUNK],
            shifts[start : start + _CHUNK],
            image.height,
            image.width,
            cfg.grid_size,
        )
        batch = [ImageTensor(image.data * m[:, :, None]) for m in masks]
        scores = np.asarray(scorer.score_batch(batch))[:, category]
        accum += np.tensordot(scores, masks, axes=1)
    return SaliencyMap(accum / (cfg.mask_count * cfg.keep_probability))
