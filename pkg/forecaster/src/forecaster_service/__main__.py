"""Command-line entry: `python -m forecaster_service --mode stub_constant ...`"""

import argparse
import json
import sys

from .config import ServiceConfig, load_config
from .service import serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="forecaster-service")
    parser.add_argument("--config", help="JSON config file (overrides flags)")
    parser.add_argument("--mode", default=None)
    parser.add_argument("--d", type=int, default=1)
    parser.add_argument("--min-context", type=int, default=1)
    parser.add_argument("--listen", choices=["stdio", "tcp"], default="stdio")
    parser.add_argument("--port", type=int, default=0)
    parser.add_argument("--value", type=float, default=None)
    parser.add_argument("--transition", default=None, help="JSON matrix")
    parser.add_argument("--intercept", default=None, help="JSON vector")
    parser.add_argument("--noise-scale", default=None, help="JSON vector")
    parser.add_argument("--model-path", default=None)
    parser.add_argument("--name", default="")
    args = parser.parse_args(argv)

    try:
        if args.config:
            config = load_config(args.config)
        else:
            if args.mode is None:
                parser.error("--mode (or --config) is required")
            config = ServiceConfig(
                mode=args.mode,
                d=args.d,
                min_context=args.min_context,
                listen=args.listen,
                port=args.port,
                value=args.value,
                transition=json.loads(args.transition) if args.transition else None,
                intercept=json.loads(args.intercept) if args.intercept else None,
                noise_scale=json.loads(args.noise_scale) if args.noise_scale else None,
                model_path=args.model_path,
                name=args.name,
            )
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return serve(config)


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
