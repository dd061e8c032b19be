"""Readable, re-parsable report formats for metric results.

Per-image CSV: one row per image x method x metric, with empty values for
degenerate correlations. Aggregate CSV: per method x metric means with the
count of contributing images (degenerate rows are excluded from the
denominator, never coerced to 0). Floats are written with repr() so
re-parsing is bit-exact.
"""

from __future__ import annotations

import csv
import io
import json

from .metrics import METRIC_NAMES, ORIENTATIONS, MetricRow

PER_IMAGE_HEADER = (
    "image",
    "method",
    "metric",
    "value",
    "degenerate",
    "orientation",
    "scorer_id",
    "config_hash",
)
AGGREGATE_HEADER = ("method", "metric", "mean", "count", "orientation")


def rows_to_csv(rows: list[MetricRow], metrics: tuple = METRIC_NAMES) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(PER_IMAGE_HEADER)
    for row in sorted(rows, key=lambda r: (r.image_id, r.method_id)):
        for metric in metrics:
            if metric not in row.values:
                continue
            value = row.values[metric]
            writer.writerow(
                [
                    row.image_id,
                    row.method_id,
                    metric,
                    "" if value is None else repr(float(value)),
                    "1" if metric in row.degenerate else "0",
                    ORIENTATIONS[metric],
                    row.scorer_id,
                    row.config_hash,
                ]
            )
    return out.getvalue()


def rows_from_csv(text: str) -> list[MetricRow]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or set(PER_IMAGE_HEADER) - set(reader.fieldnames):
        raise ValueError(f"per-image CSV needs columns {PER_IMAGE_HEADER}")
    grouped: dict[tuple[str, str], dict] = {}
    for record in reader:
        key = (record["image"], record["method"])
        entry = grouped.setdefault(
            key,
            {
                "values": {},
                "degenerate": [],
                "scorer_id": record["scorer_id"],
                "config_hash": record["config_hash"],
            },
        )
        metric = record["metric"]
        entry["values"][metric] = None if record["value"] == "" else float(record["value"])
        if record["degenerate"] == "1":
            entry["degenerate"].append(metric)
    return [
        MetricRow(
            image_id=image,
            method_id=method,
            values=entry["values"],
            degenerate=tuple(entry["degenerate"]),
            scorer_id=entry["scorer_id"],
            config_hash=entry["config_hash"],
        )
        for (image, method), entry in sorted(grouped.items())
    ]


def aggregate_rows(rows: list[MetricRow]) -> dict[str, dict[str, tuple[float, int]]]:
    """Per-method mean of each metric over images: {method: {metric: (mean,
    count)}}. IIC rows are 0/1 so their mean is the usual rate."""
    sums: dict[str, dict[str, list]] = {}
    for row in rows:
        per_metric = sums.setdefault(row.method_id, {})
        for metric, value in row.values.items():
            if value is None:
                continue
            acc = per_metric.setdefault(metric, [0.0, 0])
            acc[0] += value
            acc[1] += 1
    return {
        method: {
            metric: (acc[0] / acc[1], acc[1]) for metric, acc in sorted(per_metric.items())
        }
        for method, per_metric in sorted(sums.items())
    }


def aggregate_to_csv(aggregate: dict) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(AGGREGATE_HEADER)
    for method in sorted(aggregate):
        for metric in METRIC_NAMES:
            if metric not in aggregate[method]:
                continue
            mean, count = aggregate[method][metric]
            writer.writerow([method, metric, repr(float(mean)), count, ORIENTATIONS[metric]])
    return out.getvalue()


def aggregate_from_csv(text: str) -> dict:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or set(AGGREGATE_HEADER) - set(reader.fieldnames):
        raise ValueError(f"aggregate CSV needs columns {AGGREGATE_HEADER}")
    out: dict[str, dict[str, tuple[float, int]]] = {}
    for record in reader:
        out.setdefault(record["method"], {})[record["metric"]] = (
            float(record["mean"]),
            int(record["count"]),
        )
    return out


def report_json(rows: list[MetricRow], aggregate: dict, *, scorer_id: str,
                config_hash: str) -> str:
    """Nested JSON variant of both reports."""
    payload = {
        "scorer_id": scorer_id,
        "config_hash": config_hash,
        "rows": [
            {
                "image": row.image_id,
                "method": row.method_id,
                "values": {m: row.values[m] for m in sorted(row.values)},
                "degenerate": sorted(row.degenerate),
            }
            for row in sorted(rows, key=lambda r: (r.image_id, r.method_id))
        ],
        "aggregate": {
            method: {
                metric: {"mean": mean, "count": count}
                for metric, (mean, count) in per_metric.items()
            }
            for method, per_metric in aggregate.items()
        },
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
