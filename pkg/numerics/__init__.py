from numerics.gradcheck import finite_diff_check
from numerics.params import ModelParams
from numerics.random import derive_seed, philox
from numerics.tensor import (
    GradContext,
    Tensor,
    get_dtype,
    no_grad,
    precision,
    set_precision,
    stop_gradient,
)
