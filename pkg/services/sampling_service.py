from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from models.conditioning import CondMode
from models.enums import GuidanceStyle
from models.image import Image
from models.recipes import GuidanceConfig, SampleConfig
from numerics.params import ModelParams
from numerics.random import derive_seed, philox
from numerics.tensor import no_grad
from services.backbone.contracts import VelocityModel
from services.conditioning_service import ConditionEncoders, ConditioningService
from utils.decorators import contract_operation, measure_performance
from utils.exceptions import NumericalException
from utils.system.logger import logger
from utils.validation.validators import validate_integer

VelocityFn = Callable[[np.ndarray, float], np.ndarray]


class SamplingService:
    @staticmethod
    def euler_integrate(velocity_fn: VelocityFn, z1: np.ndarray, steps: int) -> np.ndarray:
        """Integrate from t = 1 to t = 0 on the grid t_k = 1 - k/steps."""
        steps = validate_integer(steps, min_value=1, field_name="steps")
        dt = 1.0 / steps
        z = np.array(z1, dtype=np.float64)
        for k in range(steps):
            t_k = 1.0 - k / steps
            z = z - dt * np.asarray(velocity_fn(z, t_k), dtype=np.float64)
            if not np.all(np.isfinite(z)):
                raise NumericalException(
                    f"sampler state became non-finite at step {k}",
                    details={"step": k, "t": t_k},
                )
        return z

    @staticmethod
    def guided_velocity_batch(
        teacher: VelocityModel,
        z_t: np.ndarray,
        t: Union[float, np.ndarray],
        c_str: Sequence[np.ndarray],
        c_sem: Sequence[np.ndarray],
        cfg: GuidanceConfig,
        params: Optional[ModelParams] = None,
    ) -> np.ndarray:
        """One batched forward per branch: two when guidance is on, one for ``none``.

        ``t`` is a scalar or one time per sample.
        """
        batch = len(c_str)
        times = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
        full = [CondMode.full(cs, sem) for cs, sem in zip(c_str, c_sem)]
        with no_grad():
            v_cond = teacher.forward_batch(z_t, times, times, full, params=params).numpy()
            style = GuidanceStyle(cfg.style)
            if style is GuidanceStyle.NONE:
                return v_cond
            aux = [ConditioningService.auxiliary_mode(style, cs, cfg.alpha_infer) for cs in c_str]
            v_aux = teacher.forward_batch(z_t, times, times, aux, params=params).numpy()
        return ConditioningService.combine_for_style(style, v_cond, v_aux, cfg.scale)

    @staticmethod
    def guided_velocity(
        teacher: VelocityModel,
        z_t: np.ndarray,
        t: float,
        c_str: np.ndarray,
        c_sem: np.ndarray,
        cfg: GuidanceConfig,
        params: Optional[ModelParams] = None,
    ) -> np.ndarray:
        out = SamplingService.guided_velocity_batch(
            teacher, np.asarray(z_t)[None], t, [c_str], [c_sem], cfg, params
        )
        return out[0]

    @staticmethod
    def initial_noise(seed: int, shape) -> np.ndarray:
        return philox(derive_seed(seed, "sample-noise")).standard_normal(shape)

    @staticmethod
    @contract_operation()
    @measure_performance(threshold=120.0)
    def super_resolve(
        teacher: VelocityModel,
        lr: Image,
        cfg: SampleConfig,
        encoders: ConditionEncoders,
    ) -> Image:
        """Guided multi-step sampling of the HR image for one LR input."""
        params = teacher.params.ema_params() if cfg.use_ema and teacher.params is not None else None
        conds = encoders.conditions(lr)
        z1 = SamplingService.initial_noise(cfg.seed, encoders.latent_shape_for(lr))

        def velocity(z: np.ndarray, t: float) -> np.ndarray:
            return SamplingService.guided_velocity(
                teacher, z, t, conds.c_str, conds.c_sem, cfg.guidance, params
            )

        z0_hat = SamplingService.euler_integrate(velocity, z1, cfg.steps)
        logger.debug(
            "Super-resolved image",
            extra={"lr_size": lr.size, "steps": cfg.steps, "style": GuidanceStyle(cfg.guidance.style).value},
        )
        return encoders.codec.decode(z0_hat)

    @staticmethod
    def super_resolve_many(
        teacher: VelocityModel,
        images: Sequence[Image],
        cfg: SampleConfig,
        encoders: ConditionEncoders,
        workers: int = 4,
    ) -> List[Image]:
        """Concurrent per-image sampling over shared read-only weights."""
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(
                pool.map(lambda img: SamplingService.super_resolve(teacher, img, cfg, encoders), images)
            )
