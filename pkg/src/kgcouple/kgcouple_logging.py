import logging
import sys
from pathlib import Path
from typing import Optional, TextIO, Union

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(funcName)s - %(message)s"


def _checked_stream(name: str, stream: Optional[TextIO], default: TextIO) -> TextIO:
    if stream is None:
        return default
    if not hasattr(stream, "write"):
        raise AttributeError(f"'{name}' must be a file-like object with a write method")
    return stream


def _handler(handler: logging.Handler, level: int, formatter: logging.Formatter, ceiling: Optional[int] = None):
    handler.setLevel(level)
    handler.setFormatter(formatter)
    if ceiling is not None:
        handler.addFilter(lambda record: record.levelno <= ceiling)
    return handler


def configure_logging(
    logger: logging.Logger,
    level: Optional[int] = None,
    stdout_stream: Optional[TextIO] = None,
    stderr_stream: Optional[TextIO] = None,
    log_file: Union[str, Path, None] = None,
) -> None:
    """Replace the handlers of a kgcouple logger.

    DEBUG through WARNING go to stdout, WARNING and above to stderr, and every record the logger passes is
    appended to log_file when one is given (the run log of an experiment).

    Args:
        logger: The logger instance to configure.
        level: New logger level; None keeps the current one.
        stdout_stream: Stream for messages (defaults to sys.stdout).
        stderr_stream: Stream for errors (defaults to sys.stderr).
        log_file: Optional run-log path. Parent directories are created.
    """
    out = _checked_stream("stdout_stream", stdout_stream, sys.stdout)
    err = _checked_stream("stderr_stream", stderr_stream, sys.stderr)

    if level is not None:
        logger.setLevel(level)
    logger.debug(f"Logger {logger.name} level is {logging.getLevelName(logger.level)}")

    for old in list(logger.handlers):
        logger.removeHandler(old)
        if isinstance(old, logging.FileHandler):
            old.close()

    formatter = logging.Formatter(LOG_FORMAT)
    logger.addHandler(_handler(logging.StreamHandler(out), logging.DEBUG, formatter, ceiling=logging.WARNING))
    logger.addHandler(_handler(logging.StreamHandler(err), logging.WARNING, formatter))

    if log_file is not None:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        logger.addHandler(_handler(logging.FileHandler(log_path, encoding="utf-8"), logging.DEBUG, formatter))
        logger.debug(f"Run log at {log_path}")

    for stream in (stdout_stream, stderr_stream):
        if stream is not None and hasattr(stream, "flush"):
            stream.flush()
