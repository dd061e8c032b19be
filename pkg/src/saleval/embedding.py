"""Dense t-SNE over a precomputed distance matrix: perplexity-calibrated
input probabilities, the heavy-tailed low-dimensional kernel, and plain
gradient descent with momentum and early exaggeration.

Sized for hundreds of points; no tree or interpolation approximations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, PerplexityError

_P_FLOOR = 1e-12
_ENTROPY_TOL = 1e-7
_MAX_SEARCH_STEPS = 256


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 100.0
    early_momentum: float = 0.5
    late_momentum: float = 0.8
    momentum_switch: int = 250
    exaggeration: float = 4.0
    exaggeration_iters: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.perplexity <= 0:
            raise ValueError("perplexity must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


@dataclass(frozen=True)
class Embedding2D:
    """Final 2-D coordinates with the KL divergence reached and its
    per-iteration trajectory."""

    points: np.ndarray
    kl: float
    kl_trajectory: np.ndarray


def _check_distances(dist: np.ndarray) -> np.ndarray:
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ValueError("distance matrix must be square")
    if dist.shape[0] < 2:
        raise ValueError("need at least two points")
    if not np.all(np.isfinite(dist)):
        raise ValueError("distances must be finite")
    if not np.allclose(dist, dist.T):
        raise ValueError("distance matrix must be symmetric")
    if not np.allclose(np.diag(dist), 0.0):
        raise ValueError("distance matrix must have a zero diagonal")
    if dist.min() < 0:
        raise ValueError("distances must be non-negative")
    return dist


def _row_distribution(sq_row: np.ndarray, beta: float) -> tuple[np.ndarray, float]:
    """Softmax of -beta * d^2 over the row (self excluded upstream) and its
    Shannon entropy in bits; shift-stable for extreme beta."""
    logits = -beta * sq_row
    logits -= logits.max()
    p = np.exp(logits)
    p /= p.sum()
    nonzero = p[p > 0]
    entropy = float(-(nonzero * np.log2(nonzero)).sum())
    return p, entropy


def _search_beta(sq_row: np.ndarray, target_bits: float) -> np.ndarray:
    """Binary-search the precision so that row entropy hits the target.

    Rows whose entropy range cannot reach the target (heavy distance ties)
    saturate at the nearest achievable value.
    """
    beta = 1.0
    lo = None
    hi = None
    p, entropy = _row_distribution(sq_row, beta)
    for _ in range(_MAX_SEARCH_STEPS):
        if abs(entropy - target_bits) <= _ENTROPY_TOL:
            break
        if entropy > target_bits:
            lo = beta
            beta = beta * 2.0 if hi is None else (lo + hi) / 2.0
        else:
            hi = beta
            beta = beta / 2.0 if lo is None else (lo + hi) / 2.0
        p, entropy = _row_distribution(sq_row, beta)
    return p


def joint_probabilities(dist, perplexity: float) -> np.ndarray:
    """Symmetric input probabilities from a distance matrix.

    Per-row Gaussian bandwidths are calibrated so each conditional
    distribution's entropy equals log2(perplexity); the conditionals are
    then symmetrized and jointly normalized to sum 1, with a 1e-12 floor
    on off-diagonal entries.
    """
    dist = _check_distances(dist)
    n = dist.shape[0]
    if not perplexity < n - 1:
        raise PerplexityError(f"perplexity {perplexity} infeasible for {n} points")
    target_bits = float(np.log2(perplexity))
    sq = dist**2
    conditional = np.zeros((n, n))
    others = np.arange(n)
    for i in range(n):
        mask = others != i
        conditional[i, mask] = _search_beta(sq[i, mask], target_bits)
    joint = (conditional + conditional.T) / (2.0 * n)
    off_diagonal = ~np.eye(n, dtype=bool)
    joint[off_diagonal] = np.maximum(joint[off_diagonal], _P_FLOOR)
    return joint


def _student_t_terms(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    diff = points[:, None, :] - points[None, :, :]
    sq = (diff**2).sum(axis=2)
    num = 1.0 / (1.0 + sq)
    np.fill_diagonal(num, 0.0)
    q = num / num.sum()
    return q, num


def kl_gradient(p: np.ndarray, points: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(P || Q) under the Student-t output kernel and its gradient,
    4 * sum_j (p_ij - q_ij) (y_i - y_j) / (1 + ||y_i - y_j||^2)."""
    p = np.asarray(p, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2 or p.shape != (points.shape[0],) * 2:
        raise ValueError("shapes disagree: expected (n, n) probabilities and (n, 2) points")
    q, num = _student_t_terms(points)
    positive = p > 0
    kl = float((p[positive] * np.log(p[positive] / np.maximum(q[positive], _P_FLOOR))).sum())
    weights = (p - q) * num
    grad = 4.0 * (
        points * weights.sum(axis=1, keepdims=True) - weights @ points
    )
    return kl, grad


def tsne_fit(dist, cfg: TsneConfig | None = None) -> Embedding2D:
    """Gradient descent on the KL objective with the configured momentum
    schedule and early exaggeration; fully determined by the seed."""
    cfg = cfg or TsneConfig()
    p = joint_probabilities(dist, cfg.perplexity)
    n = p.shape[0]
    rng = np.random.default_rng(cfg.seed)
    points = rng.normal(scale=1e-2, size=(n, 2))
    update = np.zeros_like(points)
    trajectory = np.empty(cfg.iterations)
    for it in range(cfg.iterations):
        p_eff = p * cfg.exaggeration if it < cfg.exaggeration_iters else p
        kl, grad = kl_gradient(p_eff, points)
        trajectory[it] = kl
        momentum = cfg.early_momentum if it < cfg.momentum_switch else cfg.late_momentum
        update = momentum * update - cfg.learning_rate * grad
        points = points + update
        points = points - points.mean(axis=0)
        if not np.all(np.isfinite(points)):
            raise DivergenceError(f"non-finite coordinates at iteration {it}")
    final_kl, _ = kl_gradient(p, points)
    return Embedding2D(points=points, kl=final_kl, kl_trajectory=trajectory)
