from abc import ABC, abstractmethod
from typing import Optional, Sequence

import numpy as np

from models.conditioning import CondMode
from models.recipes import ModelConfig
from numerics.params import ModelParams
from numerics.tensor import ArrayLike, Tensor


class VelocityModel(ABC):
    """Abstract velocity network ``f(z_t, t, r, mode)``.

    The teacher is evaluated with ``r = t``. ``forward_batch`` takes a
    leading batch axis on ``z_t`` and one entry of ``t``, ``r`` and ``modes``
    per sample; when ``params`` is given it replaces the model's own weights,
    which is how training differentiates through the model.
    """

    config: ModelConfig
    params: Optional[ModelParams] = None

    @property
    def student_mode(self) -> bool:
        return bool(getattr(self.config, "student_mode", False))

    @abstractmethod
    def forward_batch(
        self,
        z_t: ArrayLike,
        t: Sequence[float],
        r: Sequence[float],
        modes: Sequence[CondMode],
        params: Optional[ModelParams] = None,
    ) -> Tensor:
        """Velocity for each sample, same shape as ``z_t``."""
        pass

    def forward(
        self,
        z_t: np.ndarray,
        t: float,
        r: float,
        mode: CondMode,
        params: Optional[ModelParams] = None,
    ) -> np.ndarray:
        """Single-sample convenience over :meth:`forward_batch`."""
        out = self.forward_batch(np.asarray(z_t)[None], [t], [r], [mode], params=params)
        return out.numpy()[0]
