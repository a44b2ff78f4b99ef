"""Command line: serve a model config or a bare npz interchange file."""

import argparse
import sys

from .app import serve_forever
from .models import LinearModel, ModelError, load_from_config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="model-server",
        description="Serve a classifier over the black-box scoring protocol.")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", help="JSON model config file")
    source.add_argument("--model", help="npz linear model interchange file")
    parser.add_argument("--partial-k", type=int, default=None,
                        help="reply with top-k (label, score) pairs instead of full scores")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8100)
    args = parser.parse_args(argv)

    try:
        if args.config:
            model = load_from_config(args.config)
            if args.partial_k is not None:
                model.partial_k = args.partial_k
        else:
            model = LinearModel.from_file(args.model, partial_k=args.partial_k)
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    serve_forever(model, args.host, args.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
