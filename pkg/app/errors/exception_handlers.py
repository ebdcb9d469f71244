import logging
import sys
from collections.abc import Callable
from functools import wraps

from pydantic import ValidationError

from app.errors.exceptions import ConfigError, HvmpError

log = logging.getLogger(__name__)


def config_error_from_validation(exc: ValidationError, source: str) -> ConfigError:
    """Translate a pydantic validation error into a ConfigError naming every offending key."""
    problems = []
    for error in exc.errors():
        key = ".".join(str(part) for part in error["loc"]) or "<root>"
        problems.append(f"{key}: {error['msg']}")
    return ConfigError(f"{source}: " + "; ".join(problems))


def handle_cli_errors(command: Callable[..., int]) -> Callable[..., int]:
    """
    Decorate a CLI command so library exceptions become exit codes.

    The error body is written to stderr as a single JSON line and the
    exception's exit code is returned.
    """

    @wraps(command)
    def wrapper(*args: object, **kwargs: object) -> int:
        try:
            return command(*args, **kwargs)
        except HvmpError as exc:
            log.debug("command failed", exc_info=exc)
            sys.stderr.write(exc.to_pydantic().model_dump_json() + "\n")
            return exc.exit_code

    return wrapper
