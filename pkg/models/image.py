from dataclasses import dataclass
from typing import Tuple

import numpy as np

from utils.exceptions import ContractViolationException

# tolerance for values that left [0, 1] only through rounding
_RANGE_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class Image:
    """H x W x C array of unit-interval reals (C is 1 or 3), row-major float64."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ContractViolationException(
                f"image must be H x W x C, got shape {arr.shape}"
            )
        h, w, c = arr.shape
        if h <= 0 or w <= 0:
            raise ContractViolationException(f"image dimensions must be positive, got {h}x{w}")
        if c not in (1, 3):
            raise ContractViolationException(f"image channels must be 1 or 3, got {c}")
        if not np.all(np.isfinite(arr)):
            raise ContractViolationException("image contains non-finite values")
        lo, hi = float(arr.min()), float(arr.max())
        if lo < -_RANGE_SLACK or hi > 1.0 + _RANGE_SLACK:
            raise ContractViolationException(
                f"image values must lie in [0, 1], got [{lo}, {hi}]"
            )
        arr = np.clip(arr, 0.0, 1.0)
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_array(cls, array: np.ndarray, clamp: bool = False) -> "Image":
        arr = np.asarray(array, dtype=np.float64)
        return cls(np.clip(arr, 0.0, 1.0) if clamp else arr)

    @classmethod
    def constant(cls, height: int, width: int, value: float, channels: int = 3) -> "Image":
        return cls(np.full((height, width, channels), float(value)))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def size(self) -> Tuple[int, int]:
        return self.height, self.width

    def array(self) -> np.ndarray:
        """Writable copy of the pixels."""
        return np.array(self.pixels)

    def __repr__(self) -> str:
        return f"Image({self.height}x{self.width}x{self.channels})"
