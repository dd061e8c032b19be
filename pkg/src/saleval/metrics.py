"""The seven perturbation-based faithfulness metrics, computed per
(image, saliency map, scorer) triple.

Score convention: the tracked value is the probability of the category
predicted on the unperturbed image, and that category is never re-selected
while the image is being perturbed.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVarianceError
from .perturb import (
    BlurConfig,
    apply_inverse_saliency_mask,
    apply_saliency_mask,
    deletion_mask_sequence,
    gaussian_blur,
    masked_image_iter,
    revealed_image_iter,
)
from .scorer import predicted_category
from .tensors import ImageTensor, SaliencyMap, infer_block_factor

METRIC_NAMES = ("IIC", "AD", "ADD", "DAUC", "IAUC", "DC", "IC")

# "lower" means smaller values indicate a more faithful map.
ORIENTATIONS = {
    "IIC": "higher",
    "AD": "lower",
    "ADD": "higher",
    "DAUC": "lower",
    "IAUC": "higher",
    "DC": "higher",
    "IC": "higher",
}

# Metric families by perturbation style: Mask removes salient areas and
# expects the score to fall, Highlight keeps or reveals them and expects it
# to stay high or rise.
METRIC_GROUPS = {
    "Mask": ("DAUC", "DC", "ADD"),
    "Highlight": ("IAUC", "IC", "AD", "IIC"),
}


@dataclass(frozen=True)
class ScoreCurve:
    """Tracked-category scores c_k against the fraction p_k = k/K of the
    image perturbed, including the unperturbed point k = 0."""

    fractions: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.fractions, dtype=np.float64)
        s = np.asarray(self.scores, dtype=np.float64)
        if f.ndim != 1 or f.shape != s.shape or f.size < 2:
            raise ValueError("curve needs matching 1-D fraction/score arrays of length >= 2")
        if not (np.all(np.diff(f) > 0) and f[0] == 0.0 and f[-1] == 1.0):
            raise ValueError("fractions must increase strictly from 0 to 1")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "fractions", f)
        object.__setattr__(self, "scores", s)

    def normalized(self) -> np.ndarray:
        """Scores divided by their maximum, so the best point sits at 1."""
        top = self.scores.max()
        if top <= 0:
            raise ValueError("curve maximum must be positive to normalize")
        return self.scores / top


@dataclass(frozen=True)
class DropSeries:
    """Aligned pairs (s_k, v_k): the saliency of the block perturbed at step
    k and the score change that step caused."""

    saliencies: np.ndarray
    variations: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.saliencies, dtype=np.float64)
        v = np.asarray(self.variations, dtype=np.float64)
        if s.shape != v.shape or s.ndim != 1:
            raise ValueError("saliencies and variations must be matching 1-D arrays")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(v))):
            raise ValueError("series values must be finite")
        object.__setattr__(self, "saliencies", s)
        object.__setattr__(self, "variations", v)


@dataclass(frozen=True)
class EvalConfig:
    """Knobs that affect metric values (batch size deliberately excluded:
    batching must never change results)."""

    r: int | None = None
    blur_sigma: float | None = None
    normalize_insertion: bool = True
    batch_size: int = 32

    def config_hash(self) -> str:
        payload = json.dumps(
            {
                "r": self.r,
                "blur_sigma": self.blur_sigma,
                "normalize_insertion": self.normalize_insertion,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class MetricRow:
    """All seven metric values for one (image, method) pair.

    DC/IC are None when their correlation is degenerate (zero variance);
    the flags record which ones were.
    """

    image_id: str
    method_id: str
    values: dict = field(repr=False)
    degenerate: tuple = ()
    scorer_id: str = ""
    config_hash: str = ""


def _resolve_r(image: ImageTensor, s: SaliencyMap, r: int | None) -> int:
    inferred = infer_block_factor(image, s)
    if r is not None and r != inferred:
        from .errors import DimensionMismatchError

        raise DimensionMismatchError(
            f"requested block factor {r} but shapes imply {inferred}"
        )
    return inferred


def _tracked_scores(scorer, category: int, arrays, batch_size: int) -> np.ndarray:
    """Score a stream of pixel arrays, keeping only the tracked category."""
    out = []
    chunk = []
    for arr in arrays:
        chunk.append(ImageTensor(arr))
        if len(chunk) == batch_size:
            out.append(np.asarray(scorer.score_batch(chunk))[:, category])
            chunk = []
    if chunk:
        out.append(np.asarray(scorer.score_batch(chunk))[:, category])
    return np.concatenate(out) if out else np.array([])


def iic(image: ImageTensor, s: SaliencyMap, scorer) -> int:
    """1 iff the tracked score strictly increases when the non-salient
    areas are masked out. Aggregate over many images as the mean."""
    full = np.asarray(scorer.score(image))
    category = predicted_category(full)
    masked = scorer.score(apply_saliency_mask(image, s))
    return int(full[category] < np.asarray(masked)[category])


def average_drop(image: ImageTensor, s: SaliencyMap, scorer) -> float:
    """Relative score drop when only the salient areas are kept."""
    full = np.asarray(scorer.score(image))
    category = predicted_category(full)
    c_full = float(full[category])
    c_masked = float(np.asarray(scorer.score(apply_saliency_mask(image, s)))[category])
    return max(0.0, c_full - c_masked) / c_full


def average_drop_deletion(image: ImageTensor, s: SaliencyMap, scorer) -> float:
    """Relative score drop when the salient areas are removed instead."""
    full = np.asarray(scorer.score(image))
    category = predicted_category(full)
    c_full = float(full[category])
    c_inv = float(
        np.asarray(scorer.score(apply_inverse_saliency_mask(image, s)))[category]
    )
    return max(0.0, c_full - c_inv) / c_full


def deletion_curve(
    image: ImageTensor,
    s: SaliencyMap,
    scorer,
    r: int | None = None,
    *,
    batch_size: int = 32,
) -> ScoreCurve:
    """Progressively black out blocks from most to least salient, tracking
    the initially-predicted category's score after every step."""
    r = _resolve_r(image, s, r)
    seq = deletion_mask_sequence(s, r)
    full = np.asarray(scorer.score(image))
    category = predicted_category(full)
    rest = _tracked_scores(scorer, category, masked_image_iter(image, seq), batch_size)
    k = len(seq)
    return ScoreCurve(
        fractions=np.arange(k + 1) / k,
        scores=np.concatenate([[float(full[category])], rest]),
    )


def insertion_curve(
    image: ImageTensor,
    s: SaliencyMap,
    scorer,
    r: int | None = None,
    blur: BlurConfig | None = None,
    *,
    batch_size: int = 32,
) -> ScoreCurve:
    """Start from a blurred image and reveal sharp blocks in the same
    most-salient-first order; after the last step the image is exactly the
    original."""
    r = _resolve_r(image, s, r)
    seq = deletion_mask_sequence(s, r)
    full = np.asarray(scorer.score(image))
    category = predicted_category(full)
    baseline = gaussian_blur(image, blur)
    c0 = float(np.asarray(scorer.score(baseline))[category])
    rest = _tracked_scores(
        scorer, category, revealed_image_iter(image, baseline, seq), batch_size
    )
    k = len(seq)
    return ScoreCurve(fractions=np.arange(k + 1) / k, scores=np.concatenate([[c0], rest]))


def curve_auc(curve: ScoreCurve, *, normalized: bool = True) -> float:
    """Trapezoidal area under the (max-normalized) score curve."""
    y = curve.normalized() if normalized else curve.scores
    x = curve.fractions
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def dauc(image, s, scorer, r=None, *, batch_size: int = 32) -> float:
    return curve_auc(deletion_curve(image, s, scorer, r, batch_size=batch_size))


def iauc(
    image, s, scorer, r=None, blur: BlurConfig | None = None,
    *, normalized: bool = True, batch_size: int = 32,
) -> float:
    return curve_auc(
        insertion_curve(image, s, scorer, r, blur, batch_size=batch_size),
        normalized=normalized,
    )


def pearson_correlation(x, y) -> float:
    """Pearson's r, raising DegenerateVarianceError when either input is
    constant rather than returning a silent 0."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape or x.size < 2:
        raise ValueError("inputs must be matching 1-D arrays of length >= 2")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("inputs must be finite")
    dx = x - x.mean()
    dy = y - y.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx == 0.0 or vy == 0.0:
        raise DegenerateVarianceError("correlation undefined for constant input")
    r = float(dx @ dy) / math.sqrt(vx * vy)
    return min(1.0, max(-1.0, r))


def deletion_drop_series(curve: ScoreCurve, seq_values: np.ndarray) -> DropSeries:
    """v_k = c_{k-1} - c_k: the raw score drop caused by masking the block
    whose saliency is s_k."""
    return DropSeries(saliencies=seq_values, variations=-np.diff(curve.scores))


def insertion_drop_series(curve: ScoreCurve, seq_values: np.ndarray) -> DropSeries:
    """v_k = c_k - c_{k-1}: the raw score gain from revealing block k."""
    return DropSeries(saliencies=seq_values, variations=np.diff(curve.scores))


def deletion_correlation(
    image, s, scorer, r=None, *, batch_size: int = 32
) -> float:
    """Pearson correlation between each block's saliency and the raw score
    drop its deletion caused (K >= 2 steps)."""
    r = _resolve_r(image, s, r)
    seq = deletion_mask_sequence(s, r)
    if len(seq) < 2:
        raise ValueError("correlation needs at least two deletion steps")
    curve = deletion_curve(image, s, scorer, r, batch_size=batch_size)
    series = deletion_drop_series(curve, seq.values)
    return pearson_correlation(series.saliencies, series.variations)


def insertion_correlation(
    image, s, scorer, r=None, blur: BlurConfig | None = None,
    *, batch_size: int = 32,
) -> float:
    """Pearson correlation between each block's saliency and the raw score
    gain its reveal caused."""
    r = _resolve_r(image, s, r)
    seq = deletion_mask_sequence(s, r)
    if len(seq) < 2:
        raise ValueError("correlation needs at least two insertion steps")
    curve = insertion_curve(image, s, scorer, r, blur, batch_size=batch_size)
    series = insertion_drop_series(curve, seq.values)
    return pearson_correlation(series.saliencies, series.variations)


def evaluate_all(
    image: ImageTensor,
    s: SaliencyMap,
    scorer,
    config: EvalConfig | None = None,
    *,
    image_id: str = "",
    method_id: str = "",
    metrics: tuple = METRIC_NAMES,
) -> MetricRow:
    """Compute the requested metrics (default: all seven), sharing the score
    curves between the AUC and correlation metrics so each perturbed image
    is scored once."""
    unknown = [m for m in metrics if m not in METRIC_NAMES]
    if unknown:
        raise ValueError(f"unknown metrics {unknown}; choose from {METRIC_NAMES}")
    config = config or EvalConfig()
    r = _resolve_r(image, s, config.r)
    blur = BlurConfig(config.blur_sigma) if config.blur_sigma is not None else None
    seq = deletion_mask_sequence(s, r)

    full = np.asarray(scorer.score(image))
    category = predicted_category(full)
    c_full = float(full[category])

    values: dict = {}
    degenerate = []

    if {"IIC", "AD"} & set(metrics):
        c_masked = float(
            np.asarray(scorer.score(apply_saliency_mask(image, s)))[category]
        )
        if "IIC" in metrics:
            values["IIC"] = float(c_full < c_masked)
        if "AD" in metrics:
            values["AD"] = max(0.0, c_full - c_masked) / c_full
    if "ADD" in metrics:
        c_inverse = float(
            np.asarray(scorer.score(apply_inverse_saliency_mask(image, s)))[category]
        )
        values["ADD"] = max(0.0, c_full - c_inverse) / c_full

    def correlate(name, series):
        try:
            values[name] = pearson_correlation(series.saliencies, series.variations)
        except (DegenerateVarianceError, ValueError):
            values[name] = None
            degenerate.append(name)

    if {"DAUC", "DC"} & set(metrics):
        del_curve = deletion_curve(image, s, scorer, r, batch_size=config.batch_size)
        if "DAUC" in metrics:
            values["DAUC"] = curve_auc(del_curve)
        if "DC" in metrics:
            correlate("DC", deletion_drop_series(del_curve, seq.values))
    if {"IAUC", "IC"} & set(metrics):
        ins_curve = insertion_curve(
            image, s, scorer, r, blur, batch_size=config.batch_size
        )
        if "IAUC" in metrics:
            values["IAUC"] = curve_auc(ins_curve, normalized=config.normalize_insertion)
        if "IC" in metrics:
            correlate("IC", insertion_drop_series(ins_curve, seq.values))

    return MetricRow(
        image_id=image_id,
        method_id=method_id,
        values=values,
        degenerate=tuple(degenerate),
        scorer_id=getattr(scorer, "scorer_id", ""),
        config_hash=config.config_hash(),
    )
