from contextlib import nullcontext
from typing import Callable, Optional

import numpy as np

from numerics.params import ModelParams
from numerics.random import philox
from numerics.tensor import GradContext, Tensor, ensure_finite, precision
from utils.exceptions import NumericalException
from utils.system.logger import logger

LossFn = Callable[[ModelParams], Tensor]

MAX_COORDINATES = 64


def analytic_gradients(loss_fn: LossFn, params: ModelParams) -> dict:
    with GradContext() as ctx:
        ctx.watch(*params.tensors())
        loss = loss_fn(params)
        grads = ctx.gradients(loss, params.tensors())
    return dict(zip(params.names(), grads))


def _scalar_loss(loss_fn: LossFn, params: ModelParams) -> float:
    loss = loss_fn(params)
    value = float(np.asarray(loss.data).reshape(-1)[0])
    if not np.isfinite(value):
        raise NumericalException("loss is not finite during finite-difference check")
    return value


def finite_diff_check(
    loss_fn: LossFn,
    params: ModelParams,
    eps: float = 1e-5,
    seed: int = 0,
    max_coordinates: int = MAX_COORDINATES,
    abs_floor: float = 0.0,
    reference: Optional[str] = "f64",
) -> float:
    """Compare reverse-mode gradients against central differences.

    ``loss_fn`` must be deterministic (draw its randomness from a fixed seed).
    Up to ``max_coordinates`` coordinates per tensor are sampled with ``seed``.
    Central differences are evaluated in ``reference`` precision (f64 by
    default) on a copy of the parameters. Returns

        max |analytic - central| / (max(|central|, abs_floor) + 1e-12)

    over the sampled coordinates.
    """
    analytic = analytic_gradients(loss_fn, params)
    for name, grad in analytic.items():
        ensure_finite(grad, f"gradient of {name}")

    rng = philox(seed)
    if reference == "f64":
        scope, probe = precision("f64"), params.astype(np.float64)
    else:
        scope, probe = nullcontext(), params.copy()
    with scope:
        worst = 0.0
        for name in probe.names():
            base = np.array(probe[name].data)
            flat_size = base.size
            picks = rng.choice(flat_size, size=min(max_coordinates, flat_size), replace=False)
            for index in picks:
                coord = np.unravel_index(int(index), base.shape)
                plus = base.copy()
                plus[coord] += eps
                probe.set(name, plus)
                loss_plus = _scalar_loss(loss_fn, probe)
                minus = base.copy()
                minus[coord] -= eps
                probe.set(name, minus)
                loss_minus = _scalar_loss(loss_fn, probe)
                probe.set(name, base)

                central = (loss_plus - loss_minus) / (2.0 * eps)
                error = abs(float(analytic[name][coord]) - central) / (
                    max(abs(central), abs_floor) + 1e-12
                )
                worst = max(worst, error)

    logger.debug(
        "finite-difference check finished",
        extra={"max_rel_error": worst, "tensors": len(params), "eps": eps},
    )
    return worst
