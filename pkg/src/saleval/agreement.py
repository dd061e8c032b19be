"""Inter-metric agreement statistics: tie-aware Kendall tau with explicit
pair accounting, the log-based tau distance, tie-controlled rankings, and
the Mask/Highlight group averages.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRankingError
from .metrics import METRIC_GROUPS, ORIENTATIONS

# Tau of -1 is clamped here before the log so the distance stays finite.
TAU_CLAMP = -0.999


@dataclass(frozen=True)
class TauStats:
    """Pair counts behind a tau value: concordant (P), discordant (Q), tied
    only in x (T), tied only in y (U). Pairs tied in both vectors count
    toward none of them."""

    concordant: int
    discordant: int
    ties_x_only: int
    ties_y_only: int
    tau: float


def kendall_tau(x, y) -> TauStats:
    """Tie-aware Kendall correlation: (P - Q) / (sqrt(P+Q+U) * sqrt(P+Q+T)).

    Raises DegenerateRankingError when either vector is fully tied, which
    makes the denominator zero.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape or x.size < 2:
        raise ValueError("inputs must be matching 1-D vectors of length >= 2")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("inputs must be finite; NaN comparisons would miscount pairs")
    p = q = t = u = 0
    n = x.size
    for i in range(n - 1):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0.0 and dy == 0.0:
                continue
            if dx == 0.0:
                t += 1
            elif dy == 0.0:
                u += 1
            elif (dx > 0.0) == (dy > 0.0):
                p += 1
            else:
                q += 1
    # sqrt of the integer product keeps tau(x, x) == 1.0 exactly; the two
    # separate square roots would round it one ulp off.
    denominator = math.sqrt((p + q + u) * (p + q + t))
    if denominator == 0.0:
        raise DegenerateRankingError("tau undefined: a vector is fully tied")
    tau = (p - q) / denominator
    return TauStats(
        concordant=p,
        discordant=q,
        ties_x_only=t,
        ties_y_only=u,
        tau=min(1.0, max(-1.0, tau)),
    )


def tau_distance(tau: float) -> float:
    """Map agreement to a distance: -ln((tau + 1) / 2), with tau clamped to
    -0.999 so perfect disagreement stays finite (about 7.6)."""
    if not -1.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [-1, 1], got {tau}")
    clamped = max(tau, TAU_CLAMP)
    return -math.log((clamped + 1.0) / 2.0)


@dataclass(frozen=True)
class RankVector:
    """Per-approach ranks, 1 = best under the recorded orientation."""

    ranks: np.ndarray
    orientation: str
    strategy: str

    def __post_init__(self):
        object.__setattr__(self, "ranks", np.asarray(self.ranks, dtype=np.float64))


def rank_with_ties(values, orientation: str, strategy: str = "fractional") -> RankVector:
    """Rank values so the best gets 1.

    orientation: "lower" ranks small values best, "higher" large ones.
    strategy: "fractional" gives tied entries the mean of their positions;
    "ordinal" breaks ties by input order.
    """
    if orientation not in ("lower", "higher"):
        raise ValueError(f"orientation must be 'lower' or 'higher', got {orientation!r}")
    if strategy not in ("fractional", "ordinal"):
        raise ValueError(f"strategy must be 'fractional' or 'ordinal', got {strategy!r}")
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("values must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(arr)):
        raise ValueError("values must be finite")
    key = arr if orientation == "lower" else -arr
    order = np.argsort(key, kind="stable")
    ranks = np.empty(arr.size, dtype=np.float64)
    ranks[order] = np.arange(1, arr.size + 1)
    if strategy == "fractional":
        pos = 0
        while pos < arr.size:
            end = pos
            while end + 1 < arr.size and key[order[end + 1]] == key[order[pos]]:
                end += 1
            if end > pos:
                ranks[order[pos : end + 1]] = (pos + 1 + end + 1) / 2.0
            pos = end + 1
    return RankVector(ranks=ranks, orientation=orientation, strategy=strategy)


@dataclass
class MetricTable:
    """Per-approach metric values in a fixed approach order (the order
    drives ordinal tie-breaking)."""

    approaches: list[str]
    values: dict[str, np.ndarray]
    orientations: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.approaches)
        for name, column in self.values.items():
            column = np.asarray(column, dtype=np.float64)
            if column.shape != (n,):
                raise ValueError(f"column {name!r} must have one value per approach")
            self.values[name] = column
        for name in self.values:
            if name not in self.orientations:
                if name not in ORIENTATIONS:
                    raise ValueError(f"no orientation known for metric {name!r}")
                self.orientations[name] = ORIENTATIONS[name]
            elif name in ORIENTATIONS and self.orientations[name] != ORIENTATIONS[name]:
                raise ValueError(
                    f"orientation {self.orientations[name]!r} conflicts with the "
                    f"canonical orientation for {name!r}"
                )

    @classmethod
    def from_csv(cls, text: str) -> "MetricTable":
        """Parse the long format: approach,metric,value[,orientation].
        Approach order follows first appearance."""
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None or not {"approach", "metric", "value"} <= set(
            reader.fieldnames
        ):
            raise ValueError("table CSV needs approach, metric and value columns")
        approaches: list[str] = []
        cells: dict[str, dict[str, float]] = {}
        orientations: dict[str, str] = {}
        for row in reader:
            approach = row["approach"]
            metric = row["metric"]
            if approach not in approaches:
                approaches.append(approach)
            cells.setdefault(metric, {})[approach] = float(row["value"])
            if row.get("orientation"):
                orientations[metric] = row["orientation"]
        values = {}
        for metric, per_approach in cells.items():
            missing = [a for a in approaches if a not in per_approach]
            if missing:
                raise ValueError(f"metric {metric!r} missing values for {missing}")
            values[metric] = np.array([per_approach[a] for a in approaches])
        return cls(approaches=approaches, values=values, orientations=orientations)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["approach", "metric", "value", "orientation"])
        for approach_index, approach in enumerate(self.approaches):
            for metric in self.values:
                writer.writerow(
                    [
                        approach,
                        metric,
                        repr(float(self.values[metric][approach_index])),
                        self.orientations[metric],
                    ]
                )
        return out.getvalue()


def group_average_ranks(
    table: MetricTable,
    groups: dict[str, tuple] | None = None,
    strategy: str = "fractional",
) -> dict[str, dict[str, float]]:
    """Average each approach's rank over the metrics of each group.

    Returns {group: {approach: mean rank}}. Every group metric must be
    present as a table column.
    """
    groups = groups or METRIC_GROUPS
    result: dict[str, dict[str, float]] = {}
    for group, metric_names in groups.items():
        missing = [m for m in metric_names if m not in table.values]
        if missing:
            raise ValueError(f"group {group!r} is missing metric columns {missing}")
        stacked = np.stack(
            [
                rank_with_ties(
                    table.values[m], table.orientations[m], strategy
                ).ranks
                for m in metric_names
            ]
        )
        means = stacked.mean(axis=0)
        result[group] = {a: float(means[i]) for i, a in enumerate(table.approaches)}
    return result


@dataclass(frozen=True)
class TauMatrix:
    """Pairwise tau and distance between named value vectors; entries whose
    tau is undefined are flagged and left as NaN."""

    names: tuple
    tau: np.ndarray
    distance: np.ndarray
    degenerate: np.ndarray


def tau_distance_matrix(rankings, exclude: tuple = ("IIC",)) -> TauMatrix:
    """Pairwise tau distances between metrics' value vectors.

    rankings maps metric name -> per-item values (all the same length).
    IIC is excluded by default: as a 0/1 value it cannot rank items.
    """
    names = tuple(n for n in rankings if n not in exclude)
    if len(names) < 2:
        raise ValueError("need at least two metrics to compare")
    vectors = [np.asarray(rankings[n], dtype=np.float64) for n in names]
    length = vectors[0].size
    if any(v.size != length for v in vectors):
        raise ValueError("all metric vectors must have the same length")
    n = len(names)
    tau = np.full((n, n), np.nan)
    dist = np.full((n, n), np.nan)
    degenerate = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i, n):
            try:
                stats = kendall_tau(vectors[i], vectors[j])
            except DegenerateRankingError:
                degenerate[i, j] = degenerate[j, i] = True
                continue
            tau[i, j] = tau[j, i] = stats.tau
            d = tau_distance(stats.tau)
            dist[i, j] = dist[j, i] = d
    return TauMatrix(names=names, tau=tau, distance=dist, degenerate=degenerate)
