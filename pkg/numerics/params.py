from collections import OrderedDict
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from numerics.tensor import Tensor, get_dtype
from utils.exceptions import ContractViolationException


class ModelParams:
    """Named parameter tensors with EMA shadow and optimizer moments.

    Tensors are immutable; updates replace entries by name. The update loop
    is the only writer.
    """

    def __init__(
        self,
        tensors: Mapping[str, Tensor],
        ema: Optional[Mapping[str, np.ndarray]] = None,
    ):
        self._tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, tensor in tensors.items():
            self._tensors[name] = tensor if isinstance(tensor, Tensor) else Tensor(tensor)
            self._tensors[name].name = name
        if ema is None:
            self.ema = {name: t.numpy() for name, t in self._tensors.items()}
        else:
            self.ema = {name: np.array(ema[name], dtype=self._tensors[name].dtype) for name in self._tensors}
        self.first_moment: Dict[str, np.ndarray] = {}
        self.second_moment: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise ContractViolationException(f"unknown parameter {name!r}")

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> List[str]:
        return list(self._tensors)

    def items(self) -> Iterable[Tuple[str, Tensor]]:
        return self._tensors.items()

    def tensors(self) -> List[Tensor]:
        return list(self._tensors.values())

    def count(self) -> int:
        """Total number of scalar parameters."""
        return sum(t.size for t in self._tensors.values())

    def set(self, name: str, array: np.ndarray) -> None:
        current = self[name]
        if np.shape(array) != current.shape:
            raise ContractViolationException(
                f"parameter {name!r} shape {current.shape} cannot take {np.shape(array)}"
            )
        tensor = Tensor(array, name=name, dtype=current.dtype, where=f"param {name}")
        self._tensors[name] = tensor

    def copy(self) -> "ModelParams":
        clone = ModelParams(self._tensors, ema=self.ema)
        clone.first_moment = {k: v.copy() for k, v in self.first_moment.items()}
        clone.second_moment = {k: v.copy() for k, v in self.second_moment.items()}
        return clone

    def astype(self, dtype: Optional[type] = None) -> "ModelParams":
        dtype = dtype or get_dtype()
        return ModelParams(
            {n: Tensor(t.data, dtype=dtype) for n, t in self._tensors.items()},
            ema={n: e.astype(dtype) for n, e in self.ema.items()},
        )

    def ema_params(self) -> "ModelParams":
        """A parameter set holding the EMA shadow as its weights."""
        return ModelParams(
            {n: Tensor(self.ema[n], dtype=t.dtype) for n, t in self._tensors.items()},
            ema=self.ema,
        )

    def extended(self, extra: Mapping[str, Tensor]) -> "ModelParams":
        """Copy with additional named tensors appended."""
        merged = OrderedDict(self._tensors)
        ema = dict(self.ema)
        for name, tensor in extra.items():
            if name in merged:
                raise ContractViolationException(f"parameter {name!r} already present")
            merged[name] = tensor
            ema[name] = np.array(tensor.data)
        return ModelParams(merged, ema=ema)

    def allclose(self, other: "ModelParams", atol: float = 0.0) -> bool:
        if self.names() != other.names():
            return False
        return all(
            np.allclose(self[n].data, other[n].data, rtol=0.0, atol=atol)
            for n in self.names()
        )
