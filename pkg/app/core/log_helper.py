import logging
import sys

from app.core.config import LoggingConfig


def configure_logging(config: LoggingConfig) -> None:
    """
    Install a single stderr handler on the root logger.

    Calling it again replaces the previous handler, so the CLI and tests can
    reconfigure freely.

    Args:
        config (LoggingConfig): Level and record format.
    """
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_gbf_hvmp", False):
            root.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(config.format, datefmt="%H:%M:%S"))
    handler._gbf_hvmp = True  # type: ignore[attr-defined]  # noqa: SLF001
    root.addHandler(handler)
    root.setLevel(config.level)
