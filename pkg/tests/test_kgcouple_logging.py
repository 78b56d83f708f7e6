import logging
from io import StringIO
from unittest.mock import Mock

import pytest

from kgcouple import kgcouple_logging

logger = logging.getLogger("kgcouple.test")

FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(funcName)s - %(message)s"


@pytest.fixture(autouse=True)
def reset_logger():
    """Reset logger state before and after each test."""
    for handler in list(logger.handlers):
        handler.close()
    logger.handlers.clear()
    logger.setLevel(logging.NOTSET)
    yield
    for handler in list(logger.handlers):
        handler.close()
    logger.handlers.clear()
    logger.setLevel(logging.NOTSET)


@pytest.fixture
def streams():
    stdout = StringIO()
    stderr = StringIO()
    yield stdout, stderr
    stdout.close()
    stderr.close()


def test_configure_logging_splits_streams(caplog, streams):
    stdout, stderr = streams
    kgcouple_logging.configure_logging(logger, level=logging.DEBUG, stdout_stream=stdout, stderr_stream=stderr)
    caplog.clear()

    assert logger.getEffectiveLevel() == logging.DEBUG
    assert len(logger.handlers) == 2
    assert logger.handlers[0].stream is stdout
    assert logger.handlers[1].stream is stderr

    with caplog.at_level(logging.DEBUG, logger="kgcouple.test"):
        logger.debug("Test debug")
        logger.info("Test info")
        logger.warning("Test warning")
        logger.error("Test error")

    assert len(caplog.records) == 4
    out, err = stdout.getvalue(), stderr.getvalue()
    assert "Test debug" in out and "Test info" in out and "Test warning" in out
    assert "Test error" not in out
    assert "Test warning" in err and "Test error" in err
    assert "Test info" not in err

    formatter = logging.Formatter(FORMAT)
    for record in caplog.records:
        formatted = formatter.format(record)
        assert formatted in (out if record.levelno <= logging.WARNING else err)
        assert record.funcName == "test_configure_logging_splits_streams"


def test_configure_logging_level_none_preserves_level(streams):
    stdout, stderr = streams
    logger.setLevel(logging.INFO)
    kgcouple_logging.configure_logging(logger, level=None, stdout_stream=stdout, stderr_stream=stderr)
    assert logger.level == logging.INFO
    logger.debug("hidden")
    logger.info("shown")
    assert "hidden" not in stdout.getvalue()
    assert "shown" in stdout.getvalue()


def test_configure_logging_replaces_handlers(streams):
    stdout, stderr = streams
    kgcouple_logging.configure_logging(logger, level=logging.INFO, stdout_stream=stdout, stderr_stream=stderr)
    kgcouple_logging.configure_logging(logger, level=logging.INFO, stdout_stream=stdout, stderr_stream=stderr)
    assert len(logger.handlers) == 2


def test_configure_logging_run_log(tmp_path, streams):
    stdout, stderr = streams
    log_file = tmp_path / "out" / "run.log"
    kgcouple_logging.configure_logging(
        logger, level=logging.DEBUG, stdout_stream=stdout, stderr_stream=stderr, log_file=log_file
    )
    assert any(isinstance(h, logging.FileHandler) for h in logger.handlers)
    logger.info("to the run log")
    logger.error("an error for the run log")
    for handler in logger.handlers:
        handler.flush()
    content = log_file.read_text(encoding="utf-8")
    assert "to the run log" in content
    assert "an error for the run log" in content
    assert " - kgcouple.test - ERROR - test_configure_logging_run_log - " in content

    # reconfiguring without a file closes and drops the file handler
    kgcouple_logging.configure_logging(logger, stdout_stream=stdout, stderr_stream=stderr)
    assert not any(isinstance(h, logging.FileHandler) for h in logger.handlers)


def test_configure_logging_invalid_streams():
    with pytest.raises(AttributeError, match="'stdout_stream' must be a file-like object with a write method"):
        kgcouple_logging.configure_logging(logger, stdout_stream=object())
    with pytest.raises(AttributeError, match="'stderr_stream' must be a file-like object with a write method"):
        kgcouple_logging.configure_logging(logger, stderr_stream=object())


def test_configure_logging_stream_flushing():
    stdout = Mock()
    stderr = Mock()
    kgcouple_logging.configure_logging(logger, level=logging.INFO, stdout_stream=stdout, stderr_stream=stderr)
    stdout.flush.assert_called()
    stderr.flush.assert_called()
