"""Command-line entry: serve a toy-logistic model (or a plugin) over stdio
or TCP."""

from __future__ import annotations

import argparse
import sys

from .model import ToyLogisticModel, load_plugin
from .server import AdapterConfig, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scorer-adapter", description=__doc__)
    parser.add_argument("--transport", choices=("stdio", "tcp"), default="stdio")
    parser.add_argument("--port", type=int, default=0, help="TCP port (0 picks one)")
    parser.add_argument("--weights", help="TNSR file with a (categories, D) matrix")
    parser.add_argument("--bias", default=None, help="optional TNSR file, one row of biases")
    parser.add_argument("--output", choices=("probabilities", "logits"),
                        default="probabilities")
    parser.add_argument("--plugin", default=None,
                        help="package.module:callable with a `categories` attribute")
    parser.add_argument("--no-batch", action="store_true",
                        help="refuse score_batch requests")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.plugin:
            model = load_plugin(args.plugin)
        elif args.weights:
            model = ToyLogisticModel.from_files(args.weights, args.bias, args.output)
        else:
            raise ValueError("pass --weights or --plugin")
        config = AdapterConfig(
            model=model,
            output=args.output,
            transport=args.transport,
            port=args.port,
            batch=not args.no_batch,
        )
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    serve(config)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
