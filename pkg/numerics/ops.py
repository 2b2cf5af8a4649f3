"""Differentiable operations over :class:`numerics.tensor.Tensor`.

Every op is a pure function: it computes its output with numpy, then records
a backward closure on the active :class:`GradContext` (if any). Broadcasting
follows numpy rules; gradients are summed back to the input shapes.
"""

import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from numerics.tensor import ArrayLike, Tensor, active_context, as_tensor
from utils.exceptions import ContractViolationException

_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def _emit(out: np.ndarray, inputs: Tuple[Tensor, ...], backward, where: str) -> Tensor:
    result = Tensor._wrap(out, where)
    ctx = active_context()
    if ctx is not None:
        ctx.record(result, inputs, backward)
    return result


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, extent in enumerate(shape) if extent == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _emit(out, (a, b), backward, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _emit(out, (a, b), backward, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _emit(out, (a, b), backward, "mul")


def square(x: ArrayLike) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (2.0 * x.data * g,)

    return _emit(x.data * x.data, (x,), backward, "square")


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Batched matrix product ``a[..., m, k] @ b[..., k, n]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractViolationException(
            f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise ContractViolationException(
            f"matmul inner extents disagree: {a.shape} @ {b.shape}",
            details={"left": a.shape, "right": b.shape},
        )
    out = np.matmul(a.data, b.data)

    def backward(g):
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)

    return _emit(out, (a, b), backward, "matmul")


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise ContractViolationException(f"cannot reshape {x.shape} to {tuple(shape)}: {e}")

    def backward(g):
        return (g.reshape(x.shape),)

    return _emit(out, (x,), backward, "reshape")


def transpose(x: ArrayLike, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(int(i) for i in np.argsort(axes))
    out = np.transpose(x.data, axes)

    def backward(g):
        return (np.transpose(g, inverse),)

    return _emit(out, (x,), backward, "transpose")


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in parts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit(out, parts, backward, "concat")


def slice_axis(x: ArrayLike, start: int, stop: int, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _emit(out, (x,), backward, "slice")


def sum(x: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _emit(np.asarray(out), (x,), backward, "sum")


def mean(x: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    out = np.mean(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _emit(np.asarray(out), (x,), backward, "mean")


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out = exp / np.sum(exp, axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _emit(out, (x,), backward, "softmax")


def layernorm(
    x: ArrayLike,
    gain: Optional[ArrayLike] = None,
    bias: Optional[ArrayLike] = None,
    eps: float = 1e-6,
) -> Tensor:
    """Normalize over the last axis, then apply the optional affine."""
    x = as_tensor(x)
    n = x.shape[-1] if x.ndim else 0
    if n < 2:
        raise ContractViolationException(
            f"layernorm needs a normalized axis of length >= 2, got {n}"
        )
    mu = np.mean(x.data, axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    inputs = [x]
    out = xhat
    g_t = b_t = None
    if gain is not None:
        g_t = as_tensor(gain)
        inputs.append(g_t)
        out = out * g_t.data
    if bias is not None:
        b_t = as_tensor(bias)
        inputs.append(b_t)
        out = out + b_t.data

    def backward(g):
        gh = g * g_t.data if g_t is not None else g
        grad_x = inv_std * (
            gh
            - np.mean(gh, axis=-1, keepdims=True)
            - xhat * np.mean(gh * xhat, axis=-1, keepdims=True)
        )
        grads = [grad_x]
        if g_t is not None:
            grads.append(unbroadcast(g * xhat, g_t.shape))
        if b_t is not None:
            grads.append(unbroadcast(g, b_t.shape))
        return tuple(grads)

    return _emit(np.asarray(out), tuple(inputs), backward, "layernorm")


def gelu(x: ArrayLike) -> Tensor:
    """tanh-approximated GELU."""
    x = as_tensor(x)
    u = _GELU_K * (x.data + _GELU_C * x.data**3)
    th = np.tanh(u)
    out = 0.5 * x.data * (1.0 + th)

    def backward(g):
        du = _GELU_K * (1.0 + 3.0 * _GELU_C * x.data**2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x.data * (1.0 - th * th) * du),)

    return _emit(out, (x,), backward, "gelu")


def silu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    sig = expit(x.data)
    out = x.data * sig

    def backward(g):
        return (g * (sig + x.data * sig * (1.0 - sig)),)

    return _emit(out, (x,), backward, "silu")


def linear(x: ArrayLike, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` over the last axis."""
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out
