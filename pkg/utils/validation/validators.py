"""Scalar and array validators for config values and operation preconditions.

``validate_*`` coerce text or numbers and raise ``ValidationException``;
``require*`` guard operation inputs and raise ``ContractViolationException``.
Both carry the offending field in ``details``.
"""

import math
from numbers import Real
from typing import Any, Callable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from utils.exceptions import ContractViolationException, ValidationException

T = TypeVar("T")
N = TypeVar("N", int, float)

SEED_MAX = 2**64 - 1
TRUE_WORDS = frozenset({"true", "1", "yes", "on"})
FALSE_WORDS = frozenset({"false", "0", "no", "off"})


def _invalid(field_name: str, message: str, value: Any) -> ValidationException:
    return ValidationException(message, details={"field": field_name, "value": repr(value)})


def _within(value: N, lo: Optional[N], hi: Optional[N], field_name: str) -> N:
    if lo is not None and value < lo:
        raise _invalid(field_name, f"{field_name} must be greater than or equal to {lo}", value)
    if hi is not None and value > hi:
        raise _invalid(field_name, f"{field_name} must be less than or equal to {hi}", value)
    return value


def validate_integer(
    value: Any,
    min_value: Optional[int] = None,
    max_value: Optional[int] = None,
    field_name: str = "Value",
) -> int:
    """Integer from an int or a decimal string; floats and bools are refused."""
    if isinstance(value, (bool, float)):
        raise _invalid(field_name, f"{field_name}: integer required, got {value!r}", value)
    try:
        number = int(value)
    except (ValueError, TypeError):
        raise _invalid(field_name, f"{field_name}: invalid integer value {value!r}", value) from None
    return _within(number, min_value, max_value, field_name)


def validate_float(
    value: Any,
    min_value: Optional[float] = None,
    max_value: Optional[float] = None,
    field_name: str = "Value",
) -> float:
    if isinstance(value, bool) or not isinstance(value, (Real, str)):
        raise _invalid(field_name, f"{field_name}: number required, got {value!r}", value)
    try:
        number = float(value)
    except ValueError:
        raise _invalid(field_name, f"{field_name}: invalid float value {value!r}", value) from None
    if not math.isfinite(number):
        raise _invalid(field_name, f"{field_name} must be finite", value)
    return _within(number, min_value, max_value, field_name)


def validate_boolean(value: Any, field_name: str = "Value") -> bool:
    if isinstance(value, bool):
        return value
    word = str(value).strip().lower()
    if word in TRUE_WORDS:
        return True
    if word in FALSE_WORDS:
        return False
    raise _invalid(field_name, f"{field_name}: invalid boolean value {value!r}", value)


def validate_choice(value: Any, choices: Sequence[str], field_name: str = "Value") -> str:
    text = str(value).strip()
    if text not in choices:
        raise _invalid(field_name, f"{field_name} must be one of {list(choices)}, got {text!r}", value)
    return text


def validate_seed(value: Any, field_name: str = "seed") -> int:
    """Seeds are unsigned 64-bit integers."""
    return validate_integer(value, min_value=0, max_value=SEED_MAX, field_name=field_name)


def validate_list(
    value: Any,
    item_validator: Callable[[Any], T],
    min_length: int = 0,
    max_length: Optional[int] = None,
    field_name: str = "Value",
) -> List[T]:
    if not isinstance(value, (list, tuple)):
        raise _invalid(field_name, f"{field_name} must be a list", value)
    if len(value) < min_length:
        raise _invalid(field_name, f"{field_name} needs at least {min_length} items", value)
    if max_length is not None and len(value) > max_length:
        raise _invalid(field_name, f"{field_name} takes at most {max_length} items", value)
    return [item_validator(item) for item in value]


def validate_range_pair(
    value: Any,
    item_validator: Callable[[Any], T],
    field_name: str = "range",
) -> Tuple[T, T]:
    """Nonempty ``(lo, hi)`` with ``lo <= hi``."""
    lo, hi = validate_list(value, item_validator, min_length=2, max_length=2, field_name=field_name)
    if lo > hi:
        raise _invalid(field_name, f"{field_name} is empty: {lo} > {hi}", value)
    return lo, hi

def require(condition: bool, message: str, **details: Any) -> None:
    """Raise a contract violation naming the failed precondition."""
    if not condition:
        raise ContractViolationException(message, details=details or None)


def require_same_shape(a: np.ndarray, b: np.ndarray, what: str = "operands") -> None:
    if np.shape(a) != np.shape(b):
        raise ContractViolationException(
            f"shape mismatch between {what}: {np.shape(a)} vs {np.shape(b)}",
            details={"left": tuple(np.shape(a)), "right": tuple(np.shape(b))},
        )


def require_divisible(extent: int, factor: int, what: str) -> None:
    if factor <= 0 or extent % factor != 0:
        raise ContractViolationException(
            f"{what} {extent} is not divisible by {factor}",
            details={"extent": extent, "factor": factor},
        )
