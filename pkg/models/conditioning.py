from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from models.enums import CondKind
from utils.exceptions import ContractViolationException


@dataclass(frozen=True, eq=False)
class CondMode:
    """Conditioning mode handed to the backbone.

    ``c_str`` is the structural latent actually fed to the network: the full
    condition for FULL and NO_SEMANTIC, ``alpha * c_str`` for PARTIAL and
    zeros for UNCONDITIONAL. ``c_sem`` is None whenever the learned null
    token stands in for semantic tokens.
    """

    kind: CondKind
    c_str: np.ndarray
    c_sem: Optional[np.ndarray] = None
    alpha: float = 1.0

    @classmethod
    def full(cls, c_str: np.ndarray, c_sem: np.ndarray) -> "CondMode":
        if c_sem is None:
            raise ContractViolationException("full conditioning requires semantic tokens")
        return cls(CondKind.FULL, np.asarray(c_str), np.asarray(c_sem), 1.0)

    @classmethod
    def partial(cls, c_str: np.ndarray, alpha: float) -> "CondMode":
        alpha = float(alpha)
        if not 0.0 < alpha < 1.0:
            raise ContractViolationException(
                f"structural retention factor must lie in (0, 1), got {alpha}"
            )
        return cls(CondKind.PARTIAL, alpha * np.asarray(c_str), None, alpha)

    @classmethod
    def no_semantic(cls, c_str: np.ndarray) -> "CondMode":
        return cls(CondKind.NO_SEMANTIC, np.asarray(c_str), None, 1.0)

    @classmethod
    def unconditional(cls, latent_shape: Tuple[int, ...]) -> "CondMode":
        return cls(CondKind.UNCONDITIONAL, np.zeros(latent_shape), None, 0.0)

    @property
    def uses_null_token(self) -> bool:
        return self.c_sem is None
