"""Perturbed image variants consumed by the faithfulness metrics: saliency
masking, inverse masking, progressive block deletion, and Gaussian blurring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensors import ImageTensor, SaliencyMap, infer_block_factor, minmax_normalize, upsample_block

# Blur width for the reference 448-pixel inputs; scaled linearly with image size.
_REFERENCE_SIGMA = 5.0
_REFERENCE_SIZE = 448


@dataclass(frozen=True)
class BlurConfig:
    """Gaussian blur parameters; kernel radius is ceil(3*sigma), renormalized
    over in-bounds taps at the borders."""

    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def radius(self) -> int:
        return math.ceil(3.0 * self.sigma)

    @classmethod
    def for_image_size(cls, height: int, width: int) -> "BlurConfig":
        return cls(sigma=_REFERENCE_SIGMA * max(height, width) / _REFERENCE_SIZE)


@dataclass(frozen=True)
class MaskStep:
    """One deletion step: 1-based index, block coordinates in the saliency
    grid, and the saliency value that put the block at this position."""

    index: int
    block: tuple[int, int]
    value: float


@dataclass(frozen=True)
class MaskSequence:
    """Deletion order over every block of a saliency map.

    Step k zeroes the r x r image block of its coordinates on top of all
    earlier steps; after the final step the whole image is masked.
    """

    grid_shape: tuple[int, int]
    r: int
    steps: tuple[MaskStep, ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def values(self) -> np.ndarray:
        return np.array([s.value for s in self.steps])

    def cumulative_mask(self, k: int) -> np.ndarray:
        """Binary H x W mask with the first k blocks zeroed (k in 0..K)."""
        if not 0 <= k <= len(self.steps):
            raise ValueError(f"step {k} outside 0..{len(self.steps)}")
        hp, wp = self.grid_shape
        mask = np.ones((hp * self.r, wp * self.r))
        for step in self.steps[:k]:
            i, j = step.block
            mask[i * self.r : (i + 1) * self.r, j * self.r : (j + 1) * self.r] = 0.0
        return mask


def deletion_mask_sequence(s: SaliencyMap, r: int) -> MaskSequence:
    """Order every block of the saliency grid from highest to lowest value.

    Ties are broken by row-major block position so the sequence is
    deterministic.
    """
    if r < 1:
        raise ValueError(f"block factor must be >= 1, got {r}")
    flat = s.data.ravel()
    order = np.argsort(-flat, kind="stable")
    wp = s.width
    steps = tuple(
        MaskStep(index=k + 1, block=(int(idx) // wp, int(idx) % wp), value=float(flat[idx]))
        for k, idx in enumerate(order)
    )
    return MaskSequence(grid_shape=(s.height, s.width), r=r, steps=steps)


def apply_saliency_mask(image: ImageTensor, s: SaliencyMap) -> ImageTensor:
    """Keep the salient areas: multiply each pixel by the min-max-normalized,
    upsampled saliency value."""
    r = infer_block_factor(image, s)
    weight = upsample_block(minmax_normalize(s), r).data
    return ImageTensor(image.data * weight[:, :, None])


def apply_inverse_saliency_mask(image: ImageTensor, s: SaliencyMap) -> ImageTensor:
    """Remove the salient areas: multiply each pixel by one minus the
    normalized, upsampled saliency value."""
    r = infer_block_factor(image, s)
    weight = upsample_block(minmax_normalize(s), r).data
    return ImageTensor(image.data * (1.0 - weight)[:, :, None])


def _blur_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """1-D correlation along an axis, renormalizing the kernel over
    in-bounds taps (normalized convolution: blur(I)/blur(ones))."""
    moved = np.moveaxis(arr, axis, 0)
    n = moved.shape[0]
    radius = len(kernel) // 2
    num = np.zeros_like(moved)
    den = np.zeros(n)
    for t, w in enumerate(kernel):
        offset = t - radius
        src_lo = max(0, -offset)
        src_hi = min(n, n - offset)
        if src_lo >= src_hi:
            continue
        num[src_lo:src_hi] += w * moved[src_lo + offset : src_hi + offset]
        den[src_lo:src_hi] += w
    out = num / den.reshape((n,) + (1,) * (moved.ndim - 1))
    return np.moveaxis(out, 0, axis)


def gaussian_kernel(cfg: BlurConfig) -> np.ndarray:
    taps = np.arange(-cfg.radius, cfg.radius + 1, dtype=np.float64)
    kernel = np.exp(-(taps**2) / (2.0 * cfg.sigma**2))
    return kernel / kernel.sum()


def gaussian_blur(image: ImageTensor, cfg: BlurConfig | None = None) -> ImageTensor:
    """Separable Gaussian blur with renormalized borders.

    With cfg=None the sigma is scaled for the image size (sigma 5 at 448
    pixels). Output values stay within the input's value range.
    """
    if cfg is None:
        cfg = BlurConfig.for_image_size(image.height, image.width)
    kernel = gaussian_kernel(cfg)
    out = _blur_axis(image.data, kernel, axis=0)
    out = _blur_axis(out, kernel, axis=1)
    # Convex combinations can exceed [0, 1] only by rounding noise.
    return ImageTensor(np.clip(out, 0.0, 1.0))


def masked_image_iter(image: ImageTensor, seq: MaskSequence):
    """Yield the image after each deletion step (K arrays for steps 1..K).

    Arrays are snapshots of the progressively masked pixels; the input
    image is never modified.
    """
    hp, wp = seq.grid_shape
    r = seq.r
    if image.height != hp * r or image.width != wp * r:
        from .errors import DimensionMismatchError

        raise DimensionMismatchError(
            f"mask sequence for {hp * r}x{wp * r} cannot apply to image "
            f"{image.height}x{image.width}"
        )
    work = image.data.copy()
    for step in seq.steps:
        i, j = step.block
        work[i * r : (i + 1) * r, j * r : (j + 1) * r, :] = 0.0
        yield work.copy()


def revealed_image_iter(image: ImageTensor, baseline: ImageTensor, seq: MaskSequence):
    """Yield the baseline with the first k blocks replaced by sharp pixels,
    for k = 1..K, in the same block order as deletion."""
    hp, wp = seq.grid_shape
    r = seq.r
    if image.height != hp * r or image.width != wp * r:
        from .errors import DimensionMismatchError

        raise DimensionMismatchError(
            f"mask sequence for {hp * r}x{wp * r} cannot apply to image "
            f"{image.height}x{image.width}"
        )
    if baseline.data.shape != image.data.shape:
        from .errors import DimensionMismatchError

        raise DimensionMismatchError("baseline and image shapes differ")
    work = baseline.data.copy()
    for step in seq.steps:
        i, j = step.block
        work[i * r : (i + 1) * r, j * r : (j + 1) * r, :] = image.data[
            i * r : (i + 1) * r, j * r : (j + 1) * r, :
        ]
        yield work.copy()
