"""Array type and the reverse-mode gradient tape.

A :class:`Tensor` wraps an immutable numpy array. Differentiable operations
(see :mod:`numerics.ops`) record themselves on the innermost active
:class:`GradContext`; tensors become *tracked* once they are watched or
produced from tracked inputs, and only tracked inputs receive gradients.
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.exceptions import ContractViolationException, NumericalException

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]

_DTYPES = {"f32": np.float32, "f64": np.float64}
_precision = {"dtype": np.float32}
_precision_lock = threading.Lock()
_local = threading.local()


def get_dtype() -> type:
    """Default dtype for newly created tensors."""
    return _precision["dtype"]


def set_precision(name: str) -> None:
    if name not in _DTYPES:
        raise ContractViolationException(
            f"unknown precision {name!r}, expected one of {sorted(_DTYPES)}"
        )
    with _precision_lock:
        _precision["dtype"] = _DTYPES[name]


@contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the global precision (``"f32"`` or ``"f64"``)."""
    previous = _precision["dtype"]
    set_precision(name)
    try:
        yield
    finally:
        with _precision_lock:
            _precision["dtype"] = previous


def ensure_finite(array: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(array)):
        bad = int(np.size(array) - np.count_nonzero(np.isfinite(array)))
        raise NumericalException(
            f"non-finite values produced by {where}",
            details={"where": where, "non_finite": bad, "shape": tuple(array.shape)},
        )


class Tensor:
    """Immutable real array with row-major layout."""

    __slots__ = ("data", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(
        self,
        data: ArrayLike,
        name: Optional[str] = None,
        dtype: Optional[type] = None,
        where: str = "tensor",
    ):
        if isinstance(data, Tensor):
            data = data.data
        array = np.array(data, dtype=dtype or get_dtype(), copy=True)
        if any(extent <= 0 for extent in array.shape):
            raise ContractViolationException(
                f"tensor extents must be positive, got {array.shape}"
            )
        ensure_finite(array, where)
        array.flags.writeable = False
        self.data = array
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray, where: str) -> "Tensor":
        """Adopt an array produced by an op without copying."""
        array = np.asarray(array)
        tensor = cls.__new__(cls)
        ensure_finite(array, where)
        array.flags.writeable = False
        tensor.data = array
        tensor.name = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float("nan")

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __add__(self, other):
        from numerics import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from numerics import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from numerics import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from numerics import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from numerics import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from numerics import ops

        return ops.matmul(self, other)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class _TapeEntry:
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward: BackwardFn


class GradContext:
    """Records differentiable operations for reverse-mode gradients.

    Usage::

        with GradContext() as ctx:
            ctx.watch(*params.tensors())
            loss = loss_fn(params)
            grads = ctx.gradients(loss, params.tensors())
    """

    def __init__(self) -> None:
        self._entries: List[_TapeEntry] = []
        self._watched: Dict[int, Tensor] = {}
        self._tracked: Dict[int, Tensor] = {}

    def __enter__(self) -> "GradContext":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def watch(self, *tensors: Tensor) -> None:
        """Register parameter tensors; only these (and their consumers) are tracked."""
        for tensor in tensors:
            self._watched[id(tensor)] = tensor
            self._tracked[id(tensor)] = tensor

    def is_tracked(self, tensor: Tensor) -> bool:
        return id(tensor) in self._tracked

    def record(
        self, output: Tensor, inputs: Tuple[Tensor, ...], backward: BackwardFn
    ) -> None:
        if not any(id(t) in self._tracked for t in inputs):
            return
        self._entries.append(_TapeEntry(output, inputs, backward))
        self._tracked[id(output)] = output

    @property
    def recorded_ops(self) -> int:
        return len(self._entries)

    def gradients(self, loss: Tensor, wrt: Sequence[Tensor]) -> List[np.ndarray]:
        """Reverse sweep from a scalar ``loss``.

        Every tensor in ``wrt`` must have been watched; unreached tensors get
        exact zeros.
        """
        if loss.size != 1:
            raise ContractViolationException(
                f"gradients require a scalar loss, got shape {loss.shape}"
            )
        for tensor in wrt:
            if id(tensor) not in self._watched:
                raise ContractViolationException(
                    "gradient requested for a tensor that was never watched",
                    details={"name": tensor.name},
                )
        ensure_finite(loss.data, "loss")

        grads: Dict[int, np.ndarray] = {}
        if id(loss) in self._tracked:
            grads[id(loss)] = np.ones_like(loss.data)
        for entry in reversed(self._entries):
            upstream = grads.get(id(entry.output))
            if upstream is None:
                continue
            for tensor, grad in zip(entry.inputs, entry.backward(upstream)):
                if grad is None or id(tensor) not in self._tracked:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad
        return [
            np.asarray(grads.get(id(t), np.zeros_like(t.data)), dtype=t.dtype)
            for t in wrt
        ]


class _NoGrad:
    """Stack sentinel that suspends recording."""

    def record(self, output, inputs, backward) -> None:
        return None

    def is_tracked(self, tensor: Tensor) -> bool:
        return False


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_context() -> Optional[Union[GradContext, _NoGrad]]:
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording, e.g. for detached targets."""
    stack = _stack()
    sentinel = _NoGrad()
    stack.append(sentinel)
    try:
        yield
    finally:
        if stack and stack[-1] is sentinel:
            stack.pop()


def stop_gradient(tensor: ArrayLike) -> Tensor:
    """``sg(u)``: same values, never tracked."""
    if isinstance(tensor, Tensor):
        return Tensor._wrap(tensor.data, "stop_gradient")
    return Tensor(tensor)


def as_tensor(value: ArrayLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)
