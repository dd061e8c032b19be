"""Command-line front door: batch metric evaluation, agreement analysis,
t-SNE embedding, and RISE map generation.

Exit codes: 0 success, 1 configuration error, 2 finished with partial
failures (some images were skipped).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import report as report_io
from .agreement import (
    MetricTable,
    group_average_ranks,
    kendall_tau,
    tau_distance,
    tau_distance_matrix,
)
from .embedding import TsneConfig, tsne_fit
from .errors import DegenerateRankingError, SalevalError
from .metrics import METRIC_NAMES, EvalConfig, evaluate_all
from .rise import RiseConfig, rise_saliency
from .scorer import ScorerSpec
from .tensors import load_image_file, read_tnsr, write_tnsr

log = logging.getLogger("saleval")

IMAGE_SUFFIXES = (".pgm", ".ppm", ".tnsr")


class ConfigError(SalevalError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; 2 is reserved for partial
    # failures here, so turn parse errors into ConfigError instead.
    def error(self, message):
        raise ConfigError(message)


def _existing_dir(path_text: str) -> Path:
    path = Path(path_text)
    if not path.is_dir():
        raise ConfigError(f"not a directory: {path}")
    return path


def _list_images(images_dir: Path) -> list[Path]:
    files = sorted(p for p in images_dir.iterdir() if p.suffix in IMAGE_SUFFIXES)
    if not files:
        raise ConfigError(f"no {'/'.join(IMAGE_SUFFIXES)} images in {images_dir}")
    return files


def _sample_images(files: list[Path], samples: int | None, seed: int) -> list[Path]:
    """Seeded shuffle of the sorted filename list, then the first N."""
    if samples is None or samples >= len(files):
        return files
    if samples < 1:
        raise ConfigError("--samples must be >= 1")
    shuffled = list(files)
    random.Random(seed).shuffle(shuffled)
    return sorted(shuffled[:samples])


def _build_scorer(spec_text: str):
    try:
        spec = ScorerSpec.parse(spec_text)
        return spec.build()
    except (ValueError, OSError, SalevalError) as exc:
        raise ConfigError(f"cannot build scorer from {spec_text!r}: {exc}") from exc


def _derive_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    images_dir = _existing_dir(args.images)
    maps_dir = _existing_dir(args.maps)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    metrics = tuple(args.metrics.split(",")) if args.metrics else METRIC_NAMES
    bad = [m for m in metrics if m not in METRIC_NAMES]
    if bad:
        raise ConfigError(f"unknown metrics {bad}; choose from {METRIC_NAMES}")

    methods = sorted(p.name for p in maps_dir.iterdir() if p.is_dir())
    if not methods:
        raise ConfigError(f"no method subdirectories in {maps_dir}")

    files = _sample_images(_list_images(images_dir), args.samples, args.seed)
    scorer = _build_scorer(args.scorer)
    config = EvalConfig(
        r=args.r,
        blur_sigma=args.blur_sigma,
        normalize_insertion=args.normalize_insertion == "on",
    )

    def work(image_path: Path):
        rows, failures = [], []
        stem = image_path.stem
        try:
            image = load_image_file(image_path)
        except (OSError, SalevalError, ValueError) as exc:
            return rows, [(stem, "*", f"image load failed: {exc}")]
        for method in methods:
            map_path = maps_dir / method / f"{stem}.tnsr"
            if not map_path.is_file():
                failures.append((stem, method, "no saliency map"))
                continue
            try:
                saliency = read_tnsr(map_path)
                rows.append(
                    evaluate_all(
                        image,
                        saliency,
                        scorer,
                        config,
                        image_id=stem,
                        method_id=method,
                        metrics=metrics,
                    )
                )
            except (SalevalError, ValueError) as exc:
                failures.append((stem, method, str(exc)))
        return rows, failures

    all_rows, all_failures = [], []
    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        for rows, failures in pool.map(work, files):
            all_rows.extend(rows)
            all_failures.extend(failures)
    try:
        if hasattr(scorer, "close"):
            scorer.close()
    except SalevalError:
        pass

    for stem, method, reason in all_failures:
        log.warning("skipped %s/%s: %s", stem, method, reason)

    aggregate = report_io.aggregate_rows(all_rows)
    (out_dir / "per_image.csv").write_text(report_io.rows_to_csv(all_rows, metrics))
    (out_dir / "aggregate.csv").write_text(report_io.aggregate_to_csv(aggregate))
    (out_dir / "report.json").write_text(
        report_io.report_json(
            all_rows,
            aggregate,
            scorer_id=getattr(scorer, "scorer_id", args.scorer),
            config_hash=config.config_hash(),
        )
    )
    log.info("wrote %d rows for %d methods to %s", len(all_rows), len(methods), out_dir)
    return 2 if all_failures else 0


# ---------------------------------------------------------------------------
# agree
# ---------------------------------------------------------------------------


def _matrix_csv(names, matrix, degenerate) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["metric", *names])
    for i, name in enumerate(names):
        cells = [
            "" if degenerate[i, j] else repr(float(matrix[i, j]))
            for j in range(len(names))
        ]
        writer.writerow([name, *cells])
    return out.getvalue()


def _table_from_aggregate(aggregate: dict) -> MetricTable:
    methods = sorted(aggregate)
    metrics = sorted({m for per in aggregate.values() for m in per})
    values = {}
    for metric in metrics:
        missing = [m for m in methods if metric not in aggregate[m]]
        if missing:
            log.warning("metric %s missing for %s; dropped from table", metric, missing)
            continue
        values[metric] = np.array([aggregate[m][metric][0] for m in methods])
    return MetricTable(approaches=methods, values=values)


def _per_image_tau(rows, names):
    """Mean tau over images for each metric pair; images whose pair is
    degenerate are excluded from that pair's mean."""
    by_image: dict[str, dict[str, dict[str, float]]] = {}
    for row in rows:
        by_image.setdefault(row.image_id, {})[row.method_id] = row.values
    n = len(names)
    tau_sum = np.zeros((n, n))
    tau_count = np.zeros((n, n), dtype=int)
    for per_method in by_image.values():
        methods = sorted(per_method)
        for i in range(n):
            for j in range(i, n):
                try:
                    x = [per_method[m][names[i]] for m in methods]
                    y = [per_method[m][names[j]] for m in methods]
                    if any(v is None for v in x + y):
                        continue
                    stats = kendall_tau(x, y)
                except (KeyError, DegenerateRankingError, ValueError):
                    continue
                tau_sum[i, j] += stats.tau
                tau_count[i, j] += 1
                if i != j:
                    tau_sum[j, i] += stats.tau
                    tau_count[j, i] += 1
    degenerate = tau_count == 0
    tau = np.full((n, n), np.nan)
    tau[~degenerate] = tau_sum[~degenerate] / tau_count[~degenerate]
    distance = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(n):
            if not degenerate[i, j]:
                distance[i, j] = tau_distance(float(np.clip(tau[i, j], -1.0, 1.0)))
    return tau, distance, degenerate


def cmd_agree(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if bool(args.report) == bool(args.table):
        raise ConfigError("pass exactly one of --report or --table")

    if args.report:
        report_path = Path(args.report)
        if not report_path.is_file():
            raise ConfigError(f"no such report: {report_path}")
        rows = report_io.rows_from_csv(report_path.read_text())
        if not rows:
            raise ConfigError(f"report {report_path} holds no rows")
        table = _table_from_aggregate(report_io.aggregate_rows(rows))
    else:
        table_path = Path(args.table)
        if not table_path.is_file():
            raise ConfigError(f"no such table: {table_path}")
        table = MetricTable.from_csv(table_path.read_text())
        rows = None

    matrix_names = tuple(m for m in METRIC_NAMES if m != "IIC" and m in table.values)
    if args.per_image:
        if rows is None:
            raise ConfigError("--per-image needs --report input")
        tau, distance, degenerate = _per_image_tau(rows, matrix_names)
    elif len(table.approaches) < 2:
        # a single approach admits no pair comparisons; the rank table below
        # is still well defined
        size = len(matrix_names)
        tau = np.full((size, size), np.nan)
        distance = np.full((size, size), np.nan)
        degenerate = np.ones((size, size), dtype=bool)
        log.warning("only one approach: tau/distance matrices are all degenerate")
    else:
        vectors = {m: table.values[m] for m in matrix_names}
        matrix = tau_distance_matrix(vectors, exclude=("IIC",))
        tau, distance, degenerate = matrix.tau, matrix.distance, matrix.degenerate

    ranks = group_average_ranks(table, strategy=args.ties)

    (out_dir / "tau_matrix.csv").write_text(_matrix_csv(matrix_names, tau, degenerate))
    (out_dir / "distance_matrix.csv").write_text(
        _matrix_csv(matrix_names, distance, degenerate)
    )

    rank_csv = io.StringIO()
    writer = csv.writer(rank_csv, lineterminator="\n")
    writer.writerow(["group", "approach", "average_rank", "tie_strategy"])
    for group in sorted(ranks):
        ordered = sorted(ranks[group].items(), key=lambda kv: (kv[1], kv[0]))
        for approach, value in ordered:
            writer.writerow([group, approach, repr(value), args.ties])
    (out_dir / "rank_table.csv").write_text(rank_csv.getvalue())

    payload = {
        "metrics": list(matrix_names),
        "tie_strategy": args.ties,
        "mode": "per-image" if args.per_image else "aggregate",
        "tau": [[None if degenerate[i, j] else tau[i, j] for j in range(len(matrix_names))]
                for i in range(len(matrix_names))],
        "distance": [
            [None if degenerate[i, j] else distance[i, j] for j in range(len(matrix_names))]
            for i in range(len(matrix_names))
        ],
        "ranks": ranks,
    }
    (out_dir / "agree.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    log.info("wrote agreement analysis for %d metrics to %s", len(matrix_names), out_dir)
    return 0


# ---------------------------------------------------------------------------
# embed
# ---------------------------------------------------------------------------

_PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
)


def _scatter_svg(points: np.ndarray, labels: list[str]) -> str:
    width, height, margin = 640, 480, 40
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    names = sorted(set(labels))
    colors = {name: _PALETTE[i % len(_PALETTE)] for i, name in enumerate(names)}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for point, label in zip(points, labels):
        x = margin + (point[0] - lo[0]) / span[0] * (width - 2 * margin)
        y = height - margin - (point[1] - lo[1]) / span[1] * (height - 2 * margin)
        parts.append(
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="4" fill="{colors[label]}" '
            f'fill-opacity="0.75"><title>{label}</title></circle>'
        )
    for i, name in enumerate(names):
        y = margin + 16 * i
        parts.append(f'<circle cx="{width - 120}" cy="{y}" r="5" fill="{colors[name]}"/>')
        parts.append(
            f'<text x="{width - 108}" y="{y + 4}" font-family="sans-serif" '
            f'font-size="12">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_embed(args) -> int:
    report_path = Path(args.report)
    if not report_path.is_file():
        raise ConfigError(f"no such report: {report_path}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = report_io.rows_from_csv(report_path.read_text())
    metric_names = [m for m in METRIC_NAMES if m != "IIC"]
    by_image: dict[str, dict[str, dict]] = {}
    for row in rows:
        by_image.setdefault(row.image_id, {})[row.method_id] = row.values
    methods = sorted({row.method_id for row in rows})

    labels: list[str] = []
    images: list[str] = []
    vectors: list[np.ndarray] = []
    dropped = 0
    for metric in metric_names:
        for image_id in sorted(by_image):
            per_method = by_image[image_id]
            values = [per_method.get(m, {}).get(metric) for m in methods]
            if len(values) != len(methods) or any(v is None for v in values):
                dropped += 1
                continue
            labels.append(metric)
            images.append(image_id)
            vectors.append(np.asarray(values, dtype=np.float64))
    if dropped:
        log.warning("dropped %d (metric, image) points with missing values", dropped)
    n = len(vectors)
    if n < 3:
        raise ConfigError(f"only {n} usable points; need at least 3 to embed")

    neutral = tau_distance(0.0)
    distance = np.zeros((n, n))
    degenerate_pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            try:
                d = tau_distance(kendall_tau(vectors[i], vectors[j]).tau)
            except DegenerateRankingError:
                d = neutral
                degenerate_pairs += 1
            distance[i, j] = distance[j, i] = d
    if degenerate_pairs:
        log.warning(
            "%d fully-tied point pairs assigned the neutral distance ln 2",
            degenerate_pairs,
        )

    cfg = TsneConfig(
        perplexity=args.perplexity, iterations=args.iterations, seed=args.seed
    )
    embedding = tsne_fit(distance, cfg)

    coords = io.StringIO()
    writer = csv.writer(coords, lineterminator="\n")
    writer.writerow(["metric", "image", "x", "y"])
    for label, image_id, point in zip(labels, images, embedding.points):
        writer.writerow([label, image_id, repr(float(point[0])), repr(float(point[1]))])
    (out_dir / "coords.csv").write_text(coords.getvalue())
    (out_dir / "scatter.svg").write_text(_scatter_svg(embedding.points, labels))
    log.info("embedded %d points (final KL %.4f) into %s", n, embedding.kl, out_dir)
    return 0


# ---------------------------------------------------------------------------
# rise
# ---------------------------------------------------------------------------


def cmd_rise(args) -> int:
    images_dir = _existing_dir(args.images)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = _sample_images(_list_images(images_dir), args.samples, args.seed)
    scorer = _build_scorer(args.scorer)

    def work(image_path: Path):
        stem = image_path.stem
        try:
            image = load_image_file(image_path)
            cfg = RiseConfig(
                mask_count=args.masks,
                grid_size=args.grid,
                keep_probability=args.keep_prob,
                seed=_derive_seed(args.seed, image_path.name),
            )
            saliency = rise_saliency(image, scorer, cfg=cfg)
            write_tnsr(out_dir / f"{stem}.tnsr", saliency)
            return None
        except (SalevalError, ValueError, OSError) as exc:
            return (stem, str(exc))

    failures = []
    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        for failure in pool.map(work, files):
            if failure:
                failures.append(failure)
    try:
        if hasattr(scorer, "close"):
            scorer.close()
    except SalevalError:
        pass
    for stem, reason in failures:
        log.warning("skipped %s: %s", stem, reason)
    log.info("wrote %d saliency maps to %s", len(files) - len(failures), out_dir)
    return 2 if failures else 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="saleval", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="compute faithfulness metrics for image/map pairs")
    p_eval.add_argument("--images", required=True, help="directory of .pgm/.ppm/.tnsr images")
    p_eval.add_argument("--maps", required=True, help="directory with one subdirectory per method")
    p_eval.add_argument("--scorer", required=True, help="builtin:<...> | cmd:<argv> | tcp:<host:port>")
    p_eval.add_argument("--metrics", default=None, help="comma-separated subset of the seven")
    p_eval.add_argument("--r", type=int, default=None, help="expected block factor H/H'")
    p_eval.add_argument("--blur-sigma", type=float, default=None)
    p_eval.add_argument("--normalize-insertion", choices=("on", "off"), default="on")
    p_eval.add_argument("--samples", type=int, default=None)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--workers", type=int, default=1)
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_agree = sub.add_parser("agree", help="tau/distance matrices and group rank table")
    p_agree.add_argument("--report", default=None, help="per-image CSV from eval")
    p_agree.add_argument("--table", default=None, help="long-format approach,metric,value CSV")
    p_agree.add_argument("--ties", choices=("fractional", "ordinal"), default="fractional")
    p_agree.add_argument("--per-image", action="store_true",
                         help="average per-image taus instead of using aggregate means")
    p_agree.add_argument("--out", required=True)
    p_agree.set_defaults(func=cmd_agree)

    p_embed = sub.add_parser("embed", help="t-SNE projection of per-image metric rankings")
    p_embed.add_argument("--report", required=True, help="per-image CSV from eval")
    p_embed.add_argument("--perplexity", type=float, default=30.0)
    p_embed.add_argument("--iterations", type=int, default=1000)
    p_embed.add_argument("--seed", type=int, default=0)
    p_embed.add_argument("--out", required=True)
    p_embed.set_defaults(func=cmd_embed)

    p_rise = sub.add_parser("rise", help="generate randomized-mask saliency maps")
    p_rise.add_argument("--images", required=True)
    p_rise.add_argument("--scorer", required=True)
    p_rise.add_argument("--masks", type=int, default=4000)
    p_rise.add_argument("--grid", type=int, default=7)
    p_rise.add_argument("--keep-prob", type=float, default=0.5)
    p_rise.add_argument("--samples", type=int, default=None)
    p_rise.add_argument("--seed", type=int, default=0)
    p_rise.add_argument("--workers", type=int, default=1)
    p_rise.add_argument("--out", required=True)
    p_rise.set_defaults(func=cmd_rise)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return 1
    except SalevalError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
