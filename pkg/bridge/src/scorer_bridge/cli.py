"""Launch the bridge: `scorer-bridge serve ...` or `scorer-bridge replay ...`."""

from __future__ import annotations

import argparse
import logging

from scorer_bridge.app import create_app
from scorer_bridge.backends import ModelLoadError
from scorer_bridge.config import BridgeConfig, BridgeConfigError

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scorer-bridge")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="serve live backends")
    serve.add_argument("--score-model", default="lexical")
    serve.add_argument("--attention-model", default="synthetic:0")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8750)
    serve.add_argument("--max-batch-size", type=int, default=64)
    serve.add_argument("--device", default="cpu")

    replay = sub.add_parser("replay", help="serve recorded fixtures")
    replay.add_argument("fixtures")
    replay.add_argument("--host", default="127.0.0.1")
    replay.add_argument("--port", type=int, default=8750)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        config = BridgeConfig(score_model=args.score_model or None,
                              attention_model=args.attention_model or None,
                              host=args.host, port=args.port,
                              max_batch_size=args.max_batch_size,
                              device=args.device)
    else:
        config = BridgeConfig(score_model=None, attention_model=None,
                              host=args.host, port=args.port,
                              replay_fixtures=args.fixtures)
    try:
        app = create_app(config)
    except (ModelLoadError, BridgeConfigError, OSError, ValueError) as exc:
        logger.error("cannot start bridge: %s", exc)
        return 1

    import uvicorn

    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return 0


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
