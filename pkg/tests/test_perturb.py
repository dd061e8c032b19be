from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saleval import (
    BlurConfig,
    ImageTensor,
    SaliencyMap,
    apply_inverse_saliency_mask,
    apply_saliency_mask,
    deletion_mask_sequence,
    gaussian_blur,
)
from saleval.errors import DimensionMismatchError
from saleval.perturb import gaussian_kernel, masked_image_iter, revealed_image_iter


def gray(values) -> ImageTensor:
    arr = np.asarray(values, dtype=np.float64)
    return ImageTensor(arr[:, :, None])


class TestSaliencyMasking:
    def test_constant_map_is_identity(self, rng):
        img = ImageTensor(rng.random((4, 4, 3)))
        out = apply_saliency_mask(img, SaliencyMap(np.full((2, 2), 0.7)))
        np.testing.assert_array_equal(out.data, img.data)

    def test_direct_weighting(self):
        out = apply_saliency_mask(gray([[0.8, 0.6]]), SaliencyMap([[1.0, 0.0]]))
        np.testing.assert_allclose(out.data[:, :, 0], [[0.8, 0.0]])

    def test_composes_normalization_with_product(self):
        img = ImageTensor(np.full((2, 2, 1), 0.5))
        out = apply_saliency_mask(img, SaliencyMap([[0.0, 2.0], [4.0, 8.0]]))
        np.testing.assert_allclose(out.data[:, :, 0], [[0.0, 0.125], [0.25, 0.5]])

    def test_inverse_constant_map_blacks_out(self, rng):
        img = ImageTensor(rng.random((4, 4, 1)))
        out = apply_inverse_saliency_mask(img, SaliencyMap(np.full((4, 4), 2.0)))
        np.testing.assert_array_equal(out.data, np.zeros_like(img.data))

    def test_inverse_direct_weighting(self):
        out = apply_inverse_saliency_mask(gray([[0.8, 0.6]]), SaliencyMap([[1.0, 0.0]]))
        np.testing.assert_allclose(out.data[:, :, 0], [[0.0, 0.6]])

    def test_mask_plus_inverse_reconstructs_image(self, rng):
        img = ImageTensor(rng.random((6, 6, 3)))
        s = SaliencyMap(rng.normal(size=(3, 3)))
        kept = apply_saliency_mask(img, s)
        removed = apply_inverse_saliency_mask(img, s)
        np.testing.assert_allclose(kept.data + removed.data, img.data, atol=1e-15)

    def test_all_ones_map_is_identity(self, rng):
        img = ImageTensor(rng.random((4, 4, 1)))
        out = apply_saliency_mask(img, SaliencyMap(np.ones((4, 4))))
        np.testing.assert_array_equal(out.data, img.data)

    def test_dimension_mismatch(self):
        img = ImageTensor(np.zeros((4, 4, 1)))
        with pytest.raises(DimensionMismatchError):
            apply_saliency_mask(img, SaliencyMap(np.zeros((3, 3))))


class TestDeletionSequence:
    def test_orders_by_value(self):
        seq = deletion_mask_sequence(SaliencyMap([[0.9, 0.1], [0.5, 0.7]]), r=1)
        assert [s.block for s in seq.steps] == [(0, 0), (1, 1), (1, 0), (0, 1)]

    def test_row_major_tie_break(self):
        seq = deletion_mask_sequence(SaliencyMap(np.full((2, 2), 0.4)), r=1)
        assert [s.block for s in seq.steps] == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_single_block_masks_everything(self):
        seq = deletion_mask_sequence(SaliencyMap([[0.3]]), r=4)
        assert len(seq) == 1
        np.testing.assert_array_equal(seq.cumulative_mask(1), np.zeros((4, 4)))

    def test_values_non_increasing_and_multiset_preserved(self, rng):
        s = SaliencyMap(rng.normal(size=(4, 5)))
        seq = deletion_mask_sequence(s, r=2)
        values = seq.values
        assert np.all(np.diff(values) <= 0)
        assert sorted(values) == sorted(s.data.ravel())

    def test_cumulative_masks_monotone_with_exact_block_counts(self, rng):
        s = SaliencyMap(rng.integers(0, 3, size=(3, 3)).astype(float))
        r = 2
        seq = deletion_mask_sequence(s, r)
        previous = seq.cumulative_mask(0)
        np.testing.assert_array_equal(previous, np.ones((6, 6)))
        product = np.ones((6, 6))
        for k in range(1, len(seq) + 1):
            current = seq.cumulative_mask(k)
            assert np.all(current <= previous)
            assert (current == 0).sum() == k * r * r
            # cumulative mask == product of the per-step single-block masks
            i, j = seq.steps[k - 1].block
            step_mask = np.ones((6, 6))
            step_mask[i * r : (i + 1) * r, j * r : (j + 1) * r] = 0.0
            product = product * step_mask
            np.testing.assert_array_equal(current, product)
            previous = current

    def test_iterators_match_cumulative_masks(self, rng):
        img = ImageTensor(rng.random((4, 4, 1)))
        s = SaliencyMap(rng.normal(size=(2, 2)))
        seq = deletion_mask_sequence(s, r=2)
        for k, masked in enumerate(masked_image_iter(img, seq), start=1):
            expected = img.data * seq.cumulative_mask(k)[:, :, None]
            np.testing.assert_array_equal(masked, expected)

    def test_reveal_ends_at_original(self, rng):
        img = ImageTensor(rng.random((4, 4, 1)))
        baseline = gaussian_blur(img, BlurConfig(2.0))
        seq = deletion_mask_sequence(SaliencyMap(rng.normal(size=(2, 2))), r=2)
        last = None
        for last in revealed_image_iter(img, baseline, seq):
            pass
        np.testing.assert_array_equal(last, img.data)


def dense_blur_oracle(arr: np.ndarray, cfg: BlurConfig) -> np.ndarray:
    """Direct 2-D renormalized convolution, no separability tricks."""
    kernel = gaussian_kernel(cfg)
    rad = cfg.radius
    h, w, c = arr.shape
    out = np.zeros_like(arr)
    for i in range(h):
        for j in range(w):
            num = np.zeros(c)
            den = 0.0
            for di in range(-rad, rad + 1):
                for dj in range(-rad, rad + 1):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < h and 0 <= jj < w:
                        weight = kernel[di + rad] * kernel[dj + rad]
                        num += weight * arr[ii, jj]
                        den += weight
            out[i, j] = num / den
    return out


class TestGaussianBlur:
    def test_constant_image_unchanged(self):
        img = ImageTensor(np.full((5, 5, 1), 0.3))
        out = gaussian_blur(img, BlurConfig(2.0))
        np.testing.assert_allclose(out.data, img.data, atol=1e-12)

    def test_point_source_symmetry(self):
        arr = np.zeros((9, 9, 1))
        arr[4, 4, 0] = 1.0
        out = gaussian_blur(ImageTensor(arr), BlurConfig(1.0)).data[:, :, 0]
        assert out[4, 4] == out.max()
        np.testing.assert_allclose(out, np.rot90(out), atol=1e-15)

    def test_mean_preserved_at_default_sigma(self, rng):
        img = ImageTensor(rng.random((16, 16, 1)))
        out = gaussian_blur(img)
        assert abs(out.data.mean() - img.data.mean()) < 1e-6
        oracle = dense_blur_oracle(img.data, BlurConfig.for_image_size(16, 16))
        np.testing.assert_allclose(out.data, oracle, atol=1e-12)

    def test_matches_dense_oracle_at_wide_sigma(self, rng):
        img = ImageTensor(rng.random((8, 8, 3)))
        cfg = BlurConfig(1.5)
        np.testing.assert_allclose(
            gaussian_blur(img, cfg).data, dense_blur_oracle(img.data, cfg), atol=1e-12
        )

    @given(st.integers(min_value=0, max_value=1000), st.floats(min_value=0.2, max_value=4.0))
    @settings(deadline=None, max_examples=25)
    def test_output_within_input_range(self, seed, sigma):
        img = ImageTensor(np.random.default_rng(seed).random((6, 6, 1)))
        out = gaussian_blur(img, BlurConfig(sigma))
        assert out.data.min() >= img.data.min() - 1e-12
        assert out.data.max() <= img.data.max() + 1e-12

    def test_sigma_must_be_positive(self):
        with pytest.raises(ValueError):
            BlurConfig(0.0)

    def test_radius_is_three_sigma(self):
        assert BlurConfig(1.1).radius == 4
