"""Logging wrappers shared by the services.

``contract_operation`` and ``io_operation`` log the failures a caller is
expected to handle and re-raise them unchanged; ``measure_performance`` logs
wall time and warns when a run exceeds its budget.
"""

import functools
import time
from typing import Any, Callable, Dict, Optional, ParamSpec, Type, TypeVar

from utils.exceptions import (
    AppException,
    ContractViolationException,
    DataFormatException,
    FileOperationException,
    NumericalException,
)
from utils.system.logger import logger

T = TypeVar("T")
P = ParamSpec("P")
Decorator = Callable[[Callable[P, T]], Callable[P, T]]


def _failure_fields(exc: Exception, func_name: str) -> Dict[str, Any]:
    fields: Dict[str, Any] = {
        "function": func_name,
        "error_type": type(exc).__name__,
        "error": str(exc),
    }
    if isinstance(exc, AppException) and exc.details:
        fields["details"] = exc.details
    return fields


def handle_exceptions(*exception_types: Type[Exception]) -> Decorator:
    """Log ``exception_types`` raised by the wrapped call, then re-raise."""

    def decorator(func: Callable[P, T]) -> Callable[P, T]:
        @functools.wraps(func)
        def wrapper(*args: P.args, **kwargs: P.kwargs) -> T:
            try:
                return func(*args, **kwargs)
            except exception_types as e:
                logger.error(f"{func.__name__} failed", extra=_failure_fields(e, func.__name__))
                raise

        return wrapper

    return decorator


def contract_operation() -> Decorator:
    return handle_exceptions(ContractViolationException, NumericalException)


def io_operation() -> Decorator:
    return handle_exceptions(DataFormatException, FileOperationException)


def measure_performance(threshold: Optional[float] = None) -> Decorator:
    """Log the call's wall time; warn above ``threshold`` seconds."""

    def decorator(func: Callable[P, T]) -> Callable[P, T]:
        @functools.wraps(func)
        def wrapper(*args: P.args, **kwargs: P.kwargs) -> T:
            started = time.perf_counter()
            result = func(*args, **kwargs)
            elapsed = time.perf_counter() - started
            fields = {"function": func.__name__, "elapsed_s": elapsed}
            logger.debug(f"{func.__name__} took {elapsed:.2f}s", extra=fields)
            if threshold is not None and elapsed > threshold:
                logger.warning(
                    f"{func.__name__} exceeded {threshold:g}s", extra={**fields, "threshold_s": threshold}
                )
            return result

        return wrapper

    return decorator
