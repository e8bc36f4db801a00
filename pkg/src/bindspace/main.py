"""bindspace command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

from bindspace import __version__, config
from bindspace.commands import embed, evaluate, gen_data, retrieve, train
from bindspace.errors import BindError

logger = logging.getLogger("bindspace")

_HANDLER_NAME = "bindspace-cli"


class JsonFormatter(logging.Formatter):
    """One JSON object per record."""

    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "time": self.formatTime(record),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        if record.exc_info:
            payload["exc_info"] = self.formatException(record.exc_info)
        return json.dumps(payload)


def configure_logging(level: Optional[str] = None, fmt: Optional[str] = None) -> None:
    """Install the CLI handler on the ``bindspace`` logger (idempotent)."""
    level = (level or config.LOG_LEVEL).upper()
    fmt = (fmt or config.LOG_FORMAT).lower()
    for handler in list(logger.handlers):
        if handler.get_name() == _HANDLER_NAME:
            logger.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.set_name(_HANDLER_NAME)
    if fmt == "json":
        handler.setFormatter(JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logger.addHandler(handler)
    logger.setLevel(level)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bindspace",
        description="Bind modality encoders into one joint embedding space, stage by stage.",
    )
    parser.add_argument("--version", action="version", version=f"bindspace {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in (gen_data, train, evaluate, embed, retrieve):
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        args.handler(args)
    except BindError as exc:
        logger.debug("command %s failed", args.command, exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


def run() -> None:
    sys.exit(main())
