"""
App name: Takens Reservoir Toolkit (takres)
Description: Decorator utilities for error handling in experiment operations.
"""

from functools import wraps

from utils.constants import Constants
from utils.exceptions import ConfigError, ResultIOError, TakresError
from utils.logger import logger

code = Constants.ResponseCode
exit_code = Constants.ExitCode


def _error_response(status_code: int, exit_status: int, message: str, error: Exception) -> dict:
    return {
        "status_code": status_code,
        "exit_code": exit_status,
        "context": {
            "message": message,
            "error": str(error)
        }
    }


def experiment_error_handler(func):
    """
    Decorator: Wraps experiment operations with exception handling.

    If the wrapped function raises, logs the error and returns a standardized
    response dict instead of propagating:
        * ConfigError (incl. unknown experiment) -> 400, exit code 2
        * ResultIOError                           -> 500, exit code 1
        * any other TakresError                   -> 422, exit code 1
        * anything else                           -> 500, exit code 1

    Args:
        func: The function to wrap.

    Return:
        Wrapped function with error handling.
    """
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ConfigError as e:
            logger.error(f"Config error in {func.__name__}: {e}")
            return _error_response(code.CODE_400, exit_code.CONFIG_ERROR, "Invalid configuration", e)
        except ResultIOError as e:
            logger.error(f"Result I/O error in {func.__name__}: {e}", exc_info=True)
            return _error_response(code.CODE_500, exit_code.FAILURE, "Could not write results", e)
        except TakresError as e:
            logger.error(f"Numerical error in {func.__name__}: {e}", exc_info=True)
            return _error_response(code.CODE_422, exit_code.FAILURE, "Experiment failed", e)
        except Exception as e:
            logger.error(f"Unexpected error in {func.__name__}: {e}", exc_info=True)
            return _error_response(code.CODE_500, exit_code.FAILURE, "Internal error", e)
    return wrapper
