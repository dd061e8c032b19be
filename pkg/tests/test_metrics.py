from __future__ import annotations

import math

import numpy as np
import pytest

from saleval import (
    BlurConfig,
    ConstantScorer,
    EvalConfig,
    ImageTensor,
    LinearScorer,
    Logistic2Scorer,
    SaliencyMap,
    ScoreCurve,
    average_drop,
    average_drop_deletion,
    curve_auc,
    dauc,
    deletion_correlation,
    deletion_curve,
    evaluate_all,
    gaussian_blur,
    iauc,
    iic,
    insertion_correlation,
    insertion_curve,
    pearson_correlation,
    upsample_block,
)
from saleval.errors import DegenerateVarianceError
from saleval.metrics import deletion_drop_series, insertion_drop_series
from saleval.perturb import deletion_mask_sequence


class ScriptedScorer:
    """Returns pre-arranged vectors in call order; for arithmetic checks."""

    def __init__(self, *vectors):
        self._queue = [np.asarray(v, dtype=np.float64) for v in vectors]
        self.scorer_id = "scripted"

    def score(self, image):
        return self._queue.pop(0)

    def score_batch(self, images):
        return np.stack([self.score(img) for img in images])


def gray(values) -> ImageTensor:
    return ImageTensor(np.asarray(values, dtype=np.float64)[:, :, None])


def uniform(h, w, value=0.5) -> ImageTensor:
    return ImageTensor(np.full((h, w, 1), value))


def linear_presoftmax_for(s: SaliencyMap, r: int) -> LinearScorer:
    """Tracked category's raw output is the saliency-weighted pixel sum."""
    w0 = upsample_block(s, r).data[:, :, None]
    weights = np.stack([w0, np.zeros_like(w0)])
    return LinearScorer(weights, presoftmax=True)


class TestIic:
    def test_constant_map_never_increases(self, rng):
        scorer = Logistic2Scorer(rng.normal(size=(4, 4)))
        img = ImageTensor(rng.random((4, 4, 1)))
        assert iic(img, SaliencyMap(np.full((4, 4), 0.2)), scorer) == 0

    def test_masking_negative_region_raises_tracked_score(self):
        # category-1 weight is -5 on the left half, +1 on the right; the map
        # keeps only the negative-weight region, so category 0's probability
        # rises: sigmoid oracle computed directly.
        weights = np.zeros((2, 2))
        weights[:, 0] = -2.5
        weights[:, 1] = 0.5
        scorer = Logistic2Scorer(weights)
        img = uniform(2, 2, 1.0)
        c_full = 1.0 / (1.0 + math.exp(-(-4.0)))
        assert scorer.score(img)[1] == pytest.approx(c_full)
        s = SaliencyMap(np.array([[1.0, 0.0], [1.0, 0.0]]))
        c_masked = 1.0 / (1.0 + math.exp(-(-5.0)))
        assert (1 - c_masked) > (1 - c_full)
        assert iic(img, s, scorer) == 1

    def test_constant_scorer_never_increases(self, rng):
        scorer = ConstantScorer([0.4, 0.6])
        img = ImageTensor(rng.random((4, 4, 1)))
        assert iic(img, SaliencyMap(rng.normal(size=(2, 2))), scorer) == 0


class TestAverageDrop:
    def test_direct_formula(self):
        scorer = ScriptedScorer([0.8, 0.2], [0.6, 0.4])
        out = average_drop(uniform(2, 2), SaliencyMap([[1.0, 0.0], [0.5, 0.2]]), scorer)
        assert out == pytest.approx(0.25)

    def test_clamped_at_zero_when_score_rises(self):
        scorer = ScriptedScorer([0.8, 0.2], [0.9, 0.1])
        out = average_drop(uniform(2, 2), SaliencyMap([[1.0, 0.0], [0.5, 0.2]]), scorer)
        assert out == 0.0

    def test_constant_map_gives_zero(self, rng):
        scorer = Logistic2Scorer(rng.normal(size=(4, 4)))
        img = ImageTensor(rng.random((4, 4, 1)))
        assert average_drop(img, SaliencyMap(np.full((2, 2), 3.0)), scorer) == 0.0


class TestAverageDropDeletion:
    def test_direct_formula(self):
        scorer = ScriptedScorer([0.8, 0.2], [0.2, 0.8])
        out = average_drop_deletion(
            uniform(2, 2), SaliencyMap([[1.0, 0.0], [0.5, 0.2]]), scorer
        )
        assert out == pytest.approx(0.75)

    def test_no_drop(self):
        scorer = ScriptedScorer([0.8, 0.2], [0.8, 0.2])
        out = average_drop_deletion(
            uniform(2, 2), SaliencyMap([[1.0, 0.0], [0.5, 0.2]]), scorer
        )
        assert out == 0.0

    def test_constant_map_blacks_out_image(self, rng):
        # constant map -> inverse mask zeroes everything; zero-bias logistic
        # scores the black image at exactly (0.5, 0.5)
        weights = np.abs(rng.normal(size=(4, 4))) + 0.1
        scorer = Logistic2Scorer(weights, bias=0.0)
        img = ImageTensor(rng.random((4, 4, 1)) * 0.5 + 0.5)
        c_full = float(scorer.score(img)[1])
        assert c_full > 0.5  # category 1 is tracked
        expected = max(0.0, c_full - 0.5) / c_full
        out = average_drop_deletion(img, SaliencyMap(np.full((4, 4), 0.3)), scorer)
        assert out == pytest.approx(expected, abs=1e-12)


class TestDeletionCurve:
    def test_constant_scorer_flat_normalized_curve(self, rng):
        curve = deletion_curve(
            ImageTensor(rng.random((4, 4, 1))),
            SaliencyMap(rng.normal(size=(2, 2))),
            ConstantScorer([0.3, 0.7]),
        )
        np.testing.assert_array_equal(curve.normalized(), np.ones(5))

    def test_presoftmax_drops_equal_block_saliency_sums(self, rng):
        s = SaliencyMap(rng.random((3, 3)))
        r, intensity = 2, 0.5
        scorer = linear_presoftmax_for(s, r)
        curve = deletion_curve(uniform(3 * r, 3 * r, intensity), s, scorer, r)
        seq = deletion_mask_sequence(s, r)
        drops = -np.diff(curve.scores)
        np.testing.assert_allclose(drops, seq.values * r * r * intensity, atol=1e-12)
        assert np.all(np.diff(curve.scores) <= 1e-12)

    def test_single_step_curve(self, rng):
        curve = deletion_curve(
            ImageTensor(rng.random((3, 3, 1))),
            SaliencyMap([[0.7]]),
            Logistic2Scorer(rng.normal(size=(3, 3))),
        )
        np.testing.assert_array_equal(curve.fractions, [0.0, 1.0])
        assert curve.scores.size == 2

    def test_batching_does_not_change_results(self, rng):
        img = ImageTensor(rng.random((6, 6, 1)))
        s = SaliencyMap(rng.normal(size=(3, 3)))
        scorer = Logistic2Scorer(rng.normal(size=(6, 6)))
        a = deletion_curve(img, s, scorer, batch_size=1)
        b = deletion_curve(img, s, scorer, batch_size=7)
        np.testing.assert_array_equal(a.scores, b.scores)


class TestInsertionCurve:
    def test_identity_blur_keeps_curve_flat(self, rng):
        # sigma so small the kernel is an exact delta in float64
        img = ImageTensor(rng.random((4, 4, 1)))
        curve = insertion_curve(
            img,
            SaliencyMap(rng.normal(size=(2, 2))),
            Logistic2Scorer(rng.normal(size=(4, 4))),
            blur=BlurConfig(1e-3),
        )
        np.testing.assert_allclose(curve.normalized(), np.ones(5), atol=1e-15)

    def test_constant_scorer_flat(self, rng):
        curve = insertion_curve(
            ImageTensor(rng.random((4, 4, 1))),
            SaliencyMap(rng.normal(size=(2, 2))),
            ConstantScorer([0.5, 0.5]),
        )
        np.testing.assert_array_equal(curve.normalized(), np.ones(5))

    def test_full_reveal_recovers_original_score(self, rng):
        img = ImageTensor(rng.random((6, 6, 1)))
        scorer = Logistic2Scorer(rng.normal(size=(6, 6)))
        curve = insertion_curve(img, SaliencyMap(rng.normal(size=(3, 3))), scorer)
        full = scorer.score(img)
        assert curve.scores[-1] == full.max() or curve.scores[-1] in full
        np.testing.assert_array_equal(curve.scores[-1], full[np.argmax(full)])


class TestCurveAuc:
    def test_five_point_fixture(self):
        curve = ScoreCurve(
            fractions=np.array([0.0, 0.25, 0.5, 0.75, 1.0]),
            scores=np.array([1.0, 0.6, 0.3, 0.1, 0.0]),
        )
        assert curve_auc(curve) == pytest.approx(0.375, abs=1e-15)

    def test_constant_curve(self):
        curve = ScoreCurve(fractions=np.linspace(0, 1, 4), scores=np.full(4, 0.8))
        assert curve_auc(curve) == pytest.approx(1.0)

    def test_linear_descent(self):
        curve = ScoreCurve(
            fractions=np.linspace(0, 1, 11), scores=np.linspace(1, 0, 11)
        )
        assert curve_auc(curve) == pytest.approx(0.5, abs=1e-15)


class TestPearson:
    def test_perfect_linear(self):
        assert pearson_correlation([1, 2, 3], [3, 5, 7]) == pytest.approx(1.0)

    def test_negation(self):
        assert pearson_correlation([1, 2, 3], [-1, -2, -3]) == pytest.approx(-1.0)

    def test_partial(self):
        assert pearson_correlation([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)

    def test_degenerate(self):
        with pytest.raises(DegenerateVarianceError):
            pearson_correlation([1, 1, 1], [1, 2, 3])

    def test_non_finite_inputs_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            pearson_correlation([1.0, float("inf")], [1.0, 2.0])


class TestCorrelations:
    def test_deletion_correlation_exactly_one_for_aligned_oracle(self, rng):
        s = SaliencyMap(rng.random((4, 4)))
        r = 2
        scorer = linear_presoftmax_for(s, r)
        out = deletion_correlation(uniform(4 * r, 4 * r), s, scorer, r)
        assert out == pytest.approx(1.0, abs=1e-9)

    def test_constant_scorer_degenerate(self, rng):
        with pytest.raises(DegenerateVarianceError):
            deletion_correlation(
                ImageTensor(rng.random((4, 4, 1))),
                SaliencyMap(rng.normal(size=(2, 2))),
                ConstantScorer([0.5, 0.5]),
            )

    def test_constant_saliency_degenerate(self, rng):
        with pytest.raises(DegenerateVarianceError):
            deletion_correlation(
                ImageTensor(rng.random((4, 4, 1))),
                SaliencyMap(np.full((2, 2), 0.4)),
                Logistic2Scorer(rng.normal(size=(4, 4))),
            )

    def test_insertion_gains_factor_into_saliency_times_blur_deficit(self, rng):
        # With weights = upsampled saliency, the raw gain at reveal step k is
        # exactly s_k times the revealed block's sharp-minus-blurred mass.
        s = SaliencyMap(rng.random((4, 4)) + 0.5)
        r = 2
        img = ImageTensor(rng.random((8, 8, 1)))
        scorer = linear_presoftmax_for(s, r)
        blur = BlurConfig(3.0)
        curve = insertion_curve(img, s, scorer, r, blur=blur)
        seq = deletion_mask_sequence(s, r)
        gains = np.diff(curve.scores)
        deficit = img.data - gaussian_blur(img, blur).data
        expected = [
            step.value
            * deficit[
                r * step.block[0] : r * (step.block[0] + 1),
                r * step.block[1] : r * (step.block[1] + 1),
            ].sum()
            for step in seq.steps
        ]
        np.testing.assert_allclose(gains, expected, atol=1e-12)

    def test_insertion_matches_brute_force_replay(self, rng):
        img = ImageTensor(rng.random((6, 6, 1)))
        s = SaliencyMap(rng.normal(size=(3, 3)))
        scorer = Logistic2Scorer(rng.normal(size=(6, 6)))
        blur = BlurConfig(2.0)
        out = insertion_correlation(img, s, scorer, 2, blur=blur)
        inverted = insertion_correlation(
            ImageTensor(img.data), SaliencyMap(-s.data), scorer, 2, blur=blur
        )

        # independent replay: explicitly build every revealed image
        def replay(saliency):
            seq = deletion_mask_sequence(saliency, 2)
            baseline = gaussian_blur(img, blur).data.copy()
            category = int(np.argmax(scorer.score(img)))
            scores = [scorer.score(ImageTensor(baseline))[category]]
            work = baseline.copy()
            for step in seq.steps:
                i, j = step.block
                work[2 * i : 2 * i + 2, 2 * j : 2 * j + 2] = img.data[
                    2 * i : 2 * i + 2, 2 * j : 2 * j + 2
                ]
                scores.append(scorer.score(ImageTensor(work))[category])
            gains = np.diff(scores)
            values = seq.values
            gc = gains - gains.mean()
            vc = values - values.mean()
            return float(gc @ vc / math.sqrt((gc @ gc) * (vc @ vc)))

        assert out == pytest.approx(replay(s), abs=1e-12)
        assert inverted == pytest.approx(replay(SaliencyMap(-s.data)), abs=1e-12)


class TestDaucIaucRanges:
    @pytest.mark.parametrize("seed", range(5))
    def test_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        img = ImageTensor(rng.random((6, 6, 1)))
        s = SaliencyMap(rng.normal(size=(3, 3)))
        scorer = Logistic2Scorer(rng.normal(size=(6, 6)))
        assert 0.0 <= dauc(img, s, scorer) <= 1.0
        assert 0.0 <= iauc(img, s, scorer) <= 1.0


class TestEvaluateAll:
    def test_constant_scorer_row(self, rng):
        row = evaluate_all(
            ImageTensor(rng.random((4, 4, 1))),
            SaliencyMap(rng.normal(size=(2, 2))),
            ConstantScorer([0.3, 0.7]),
            image_id="img",
            method_id="m",
        )
        assert row.values["DAUC"] == 1.0
        assert row.values["IAUC"] == 1.0
        assert row.values["AD"] == 0.0
        assert row.values["ADD"] == 0.0
        assert row.values["IIC"] == 0.0
        assert row.values["DC"] is None and row.values["IC"] is None
        assert set(row.degenerate) == {"DC", "IC"}

    def test_deterministic(self, rng):
        img = ImageTensor(rng.random((4, 4, 1)))
        s = SaliencyMap(rng.normal(size=(2, 2)))
        scorer = Logistic2Scorer(rng.normal(size=(4, 4)))
        a = evaluate_all(img, s, scorer, EvalConfig(blur_sigma=1.0))
        b = evaluate_all(img, s, scorer, EvalConfig(blur_sigma=1.0))
        assert a == b

    def test_ad_zero_whenever_iic_one(self):
        found_one = 0
        for seed in range(40):
            rng = np.random.default_rng(seed)
            img = ImageTensor(rng.random((4, 4, 1)))
            s = SaliencyMap(rng.normal(size=(2, 2)))
            scorer = Logistic2Scorer(rng.normal(size=(4, 4)))
            row = evaluate_all(img, s, scorer, metrics=("IIC", "AD"))
            if row.values["IIC"] == 1.0:
                found_one += 1
                assert row.values["AD"] == 0.0
        assert found_one > 0

    def test_metric_subset_only_computes_requested(self, rng):
        img = ImageTensor(rng.random((4, 4, 1)))
        s = SaliencyMap(rng.normal(size=(2, 2)))
        row = evaluate_all(
            img, s, Logistic2Scorer(rng.normal(size=(4, 4))), metrics=("AD", "DAUC")
        )
        assert set(row.values) == {"AD", "DAUC"}

    def test_rejects_unknown_metric(self, rng):
        with pytest.raises(ValueError):
            evaluate_all(
                ImageTensor(rng.random((2, 2, 1))),
                SaliencyMap(np.zeros((2, 2))),
                ConstantScorer([1.0]),
                metrics=("XYZ",),
            )


class TestBlockEquivariance:
    def _sum_scorer(self, h, w):
        # depends on the pixel multiset only, so block permutations that
        # move content wholesale cannot change it
        return Logistic2Scorer(np.full((h, w), 0.37), bias=-1.0)

    def test_mask_side_metrics_under_block_permutation(self, rng):
        r, hp, wp = 2, 3, 3
        s_values = rng.permutation(hp * wp).astype(float).reshape(hp, wp)
        blocks = rng.random((hp, wp, r, r, 1))
        perm = rng.permutation(hp * wp)

        def assemble(order):
            arr = np.zeros((hp * r, wp * r, 1))
            flat = blocks.reshape(hp * wp, r, r, 1)
            for target, source in enumerate(order):
                i, j = divmod(target, wp)
                arr[i * r : (i + 1) * r, j * r : (j + 1) * r] = flat[source]
            return ImageTensor(arr)

        identity = np.arange(hp * wp)
        img_a = assemble(identity)
        img_b = assemble(perm)
        s_a = SaliencyMap(s_values)
        s_b = SaliencyMap(s_values.ravel()[perm].reshape(hp, wp))
        scorer = self._sum_scorer(hp * r, wp * r)
        metrics = ("IIC", "AD", "ADD", "DAUC", "DC")
        row_a = evaluate_all(img_a, s_a, scorer, metrics=metrics)
        row_b = evaluate_all(img_b, s_b, scorer, metrics=metrics)
        for name in metrics:
            assert row_a.values[name] == pytest.approx(row_b.values[name], abs=1e-12)

    def test_all_seven_under_block_mirror(self, rng):
        # block-constant image mirrored horizontally: the blur commutes with
        # the mirror, so even the insertion metrics must match exactly
        r, hp, wp = 2, 3, 4
        grid = rng.random((hp, wp))
        s_values = rng.permutation(hp * wp).astype(float).reshape(hp, wp)
        img_a = ImageTensor(np.repeat(np.repeat(grid, r, 0), r, 1)[:, :, None])
        img_b = ImageTensor(img_a.data[:, ::-1, :])
        s_a = SaliencyMap(s_values)
        s_b = SaliencyMap(s_values[:, ::-1])
        scorer = self._sum_scorer(hp * r, wp * r)
        row_a = evaluate_all(img_a, s_a, scorer, EvalConfig(blur_sigma=1.5))
        row_b = evaluate_all(img_b, s_b, scorer, EvalConfig(blur_sigma=1.5))
        for name in row_a.values:
            assert row_a.values[name] == pytest.approx(row_b.values[name], abs=1e-12)


class TestDropSeriesAlignment:
    def test_variation_indexing(self):
        curve = ScoreCurve(
            fractions=np.array([0.0, 0.5, 1.0]), scores=np.array([0.9, 0.6, 0.1])
        )
        values = np.array([0.8, 0.2])
        deletion = deletion_drop_series(curve, values)
        np.testing.assert_allclose(deletion.variations, [0.3, 0.5])
        insertion = insertion_drop_series(curve, values)
        np.testing.assert_allclose(insertion.variations, [-0.3, -0.5])
