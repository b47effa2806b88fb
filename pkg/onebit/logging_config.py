"""Logging setup for the ``onebit`` logger tree."""

import logging
import sys
import time
from datetime import datetime
from typing import Optional, TextIO

DEFAULT_FORMAT = "[%(asctime)s] [%(levelname)s] (%(name)s) %(message)s"


class LogFormatter(logging.Formatter):
    @staticmethod
    def pp_now() -> str:
        now = datetime.now()
        return "{:%H:%M}:{:05.2f}".format(now, now.second + now.microsecond / 1e6)

    def formatTime(self, record, datefmt=None):
        if datefmt:
            return time.strftime(datefmt, self.converter(record.created))
        return LogFormatter.pp_now()


class ColoredFormatter(LogFormatter):
    COLORS = {
        logging.DEBUG: "\033[36m",
        logging.INFO: "\033[32m",
        logging.WARNING: "\033[33m",
        logging.ERROR: "\033[31m",
        logging.CRITICAL: "\033[35m",
    }
    RESET = "\033[0m"

    def format(self, record):
        message = super().format(record)
        color = self.COLORS.get(record.levelno)
        if color is None:
            return message
        return f"{color}{message}{self.RESET}"


def configure_logging(level: str = "INFO", stream: Optional[TextIO] = None) -> logging.Logger:
    """
    Install a single stream handler on the ``onebit`` logger.

    Colours are used only when the stream is a terminal. Calling this twice
    replaces the handler instead of stacking a second one.
    """
    stream = stream if stream is not None else sys.stderr
    root = logging.getLogger("onebit")
    root.setLevel(level.upper())

    for handler in list(root.handlers):
        if getattr(handler, "_onebit_handler", False):
            root.removeHandler(handler)

    handler = logging.StreamHandler(stream)
    handler._onebit_handler = True
    is_tty = hasattr(stream, "isatty") and stream.isatty()
    handler.setFormatter(ColoredFormatter(fmt=DEFAULT_FORMAT) if is_tty else LogFormatter(fmt=DEFAULT_FORMAT))
    root.addHandler(handler)
    return root
