"""One-step distillation of a guided multi-step teacher.

The student ``f(z_t, t, r, mode)`` predicts the average velocity from ``t``
to ``r``. Every step combines the base loss (``r = t`` against the
teacher's guided velocity) with one consistency loss on the samples whose
drawn ``r`` is strictly below ``t``.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from models.conditioning import CondMode
from models.enums import CheckpointKind, DistillVariant, GuidanceStyle, RcCoefficients
from models.image import Image
from models.recipes import DegradeParams, DistillConfig, GuidanceConfig
from numerics import ops
from numerics.params import ModelParams
from numerics.random import derive_seed, philox
from numerics.tensor import Tensor, no_grad
from services.backbone.checkpoint import Checkpoint, CheckpointService
from services.backbone.contracts import VelocityModel
from services.backbone.network import DiffusionTransformer
from services.conditioning_service import ConditionEncoders, ConditioningService
from services.degradation_service import DegradationService
from services.sampling_service import SamplingService
from services.training_service import LossLog, TrainingExample, TrainingService
from utils.decorators import contract_operation, measure_performance
from utils.exceptions import ContractViolationException, NumericalException
from utils.system.logger import logger
from utils.validation.validators import require, validate_integer

STUDENT_CHECKPOINT_NAME = "student.vsr"
DISTILL_LOG_NAME = "distill_loss.log"


@dataclass
class DistillDraw:
    z1: np.ndarray
    t: np.ndarray
    r: np.ndarray
    modes: List[CondMode]


@dataclass
class DistillResult:
    checkpoint: Checkpoint
    losses: List[float] = field(default_factory=list)
    checkpoint_paths: List[Path] = field(default_factory=list)


def _per_sample(values: np.ndarray, ndim: int) -> np.ndarray:
    return np.asarray(values, dtype=np.float64).reshape((-1,) + (1,) * (ndim - 1))


def _require_r_below_t(t: np.ndarray, r: np.ndarray) -> None:
    if np.any(np.asarray(r) >= np.asarray(t)):
        raise ContractViolationException(
            "consistency losses need r < t for every sample",
            details={"t": np.asarray(t).tolist(), "r": np.asarray(r).tolist()},
        )


def rc_coefficients(
    t: np.ndarray, r: np.ndarray, t_m: np.ndarray, cfg: DistillConfig
) -> tuple:
    """(c_l, c_r) per sample."""
    if RcCoefficients(cfg.rc_coefficients) is RcCoefficients.CONSTANT:
        ones = np.ones_like(np.asarray(t, dtype=np.float64))
        return cfg.c_l * ones, cfg.c_r * ones
    span = t - t_m
    return (t - r) / span, (t_m - r) / span


def rc_correction(
    u: np.ndarray,
    u_tar: np.ndarray,
    v_tea: np.ndarray,
    c_l: Union[float, np.ndarray],
    c_r: Union[float, np.ndarray],
    clip: float = 1.0,
) -> np.ndarray:
    """clip(c_l u - c_r u_tar - v_tea, [-clip, clip]), elementwise."""
    return np.clip(c_l * np.asarray(u) - c_r * np.asarray(u_tar) - np.asarray(v_tea), -clip, clip)


class DistillationService:
    @staticmethod
    def teacher_guided_velocity(
        teacher: VelocityModel,
        z_t: np.ndarray,
        t: Union[float, np.ndarray],
        c_str: Sequence[np.ndarray],
        c_sem: Sequence[np.ndarray],
        omega: float,
        alpha_infer: float,
        params: Optional[ModelParams] = None,
    ) -> np.ndarray:
        """v_pcond + omega (v_cond - v_pcond), batched; always detached."""
        guidance = GuidanceConfig(scale=omega, alpha_infer=alpha_infer, style=GuidanceStyle.RESTORATION)
        return SamplingService.guided_velocity_batch(teacher, z_t, t, c_str, c_sem, guidance, params)

    @staticmethod
    def draw_distill_inputs(
        rng: np.random.Generator, examples: Sequence[TrainingExample], cfg: DistillConfig
    ) -> DistillDraw:
        """z1, t ~ U(0,1), r (= t with probability p_r_equals_t, else U[0, t)) and the mode."""
        require(len(examples) > 0, "distillation needs a nonempty batch")
        z1, ts, rs, modes = [], [], [], []
        for example in examples:
            z1.append(rng.standard_normal(example.z0.shape))
            t = float(rng.random())
            coin = rng.random()
            r = t if coin < cfg.p_r_equals_t else float(rng.uniform(0.0, t))
            # uniform(0, t) can round up to t for tiny t
            r = min(r, t)
            ts.append(t)
            rs.append(r)
            modes.append(
                ConditioningService.sample_cond_mode(
                    rng, example.c_str, example.c_sem, cfg.p_partial, cfg.alpha_range
                )
            )
        return DistillDraw(np.stack(z1), np.asarray(ts), np.asarray(rs), modes)

    @staticmethod
    def base_loss_from_draw(
        student: VelocityModel,
        params: Optional[ModelParams],
        teacher: VelocityModel,
        examples: Sequence[TrainingExample],
        draw: DistillDraw,
        cfg: DistillConfig,
        teacher_params: Optional[ModelParams] = None,
    ) -> Tensor:
        z0 = np.stack([e.z0 for e in examples])
        z_t, _ = TrainingService.make_zt(z0, draw.z1, draw.t)
        target = DistillationService.teacher_guided_velocity(
            teacher,
            z_t,
            draw.t,
            [e.c_str for e in examples],
            [e.c_sem for e in examples],
            cfg.omega,
            cfg.alpha_infer,
            teacher_params,
        )
        prediction = student.forward_batch(z_t, draw.t, draw.t, draw.modes, params=params)
        return ops.mean(ops.square(ops.sub(prediction, Tensor(target, dtype=prediction.dtype))))

    @staticmethod
    @contract_operation()
    def base_loss(
        student: VelocityModel,
        teacher: VelocityModel,
        examples: Sequence[TrainingExample],
        rng: np.random.Generator,
        cfg: DistillConfig,
        params: Optional[ModelParams] = None,
        teacher_params: Optional[ModelParams] = None,
    ) -> Tensor:
        draw = DistillationService.draw_distill_inputs(rng, examples, cfg)
        return DistillationService.base_loss_from_draw(
            student, params, teacher, examples, draw, cfg, teacher_params
        )

    @staticmethod
    @contract_operation()
    def shortcut_loss(
        student: VelocityModel,
        z_t: np.ndarray,
        t: Sequence[float],
        r: Sequence[float],
        modes: Sequence[CondMode],
        params: Optional[ModelParams] = None,
    ) -> Tensor:
        """Midpoint consistency: u(t->r) against sg of the mean of u(t->m) and u(m->r)."""
        t = np.asarray(t, dtype=np.float64)
        r = np.asarray(r, dtype=np.float64)
        _require_r_below_t(t, r)
        z_t = np.asarray(z_t)
        m = 0.5 * (t + r)
        u_tr = student.forward_batch(z_t, t, r, modes, params=params)
        with no_grad():
            u_tm = student.forward_batch(z_t, t, m, modes, params=params).numpy()
            z_m = z_t - _per_sample(t - m, z_t.ndim) * u_tm
            u_mr = student.forward_batch(z_m, m, r, modes, params=params).numpy()
        target = 0.5 * (u_tm + u_mr)
        return ops.mean(ops.square(ops.sub(u_tr, Tensor(target, dtype=u_tr.dtype))))

    @staticmethod
    def student_rollout(
        student: VelocityModel,
        z_start: np.ndarray,
        t_start: np.ndarray,
        t_end: np.ndarray,
        modes: Sequence[CondMode],
        steps: int,
        params: Optional[ModelParams] = None,
    ) -> np.ndarray:
        """Detached student jumps on a uniform per-sample grid from t_start to t_end."""
        steps = validate_integer(steps, min_value=1, field_name="rollout_steps")
        z = np.asarray(z_start, dtype=np.float64)
        with no_grad():
            for k in range(steps):
                tau = t_start + (t_end - t_start) * (k / steps)
                tau_next = t_start + (t_end - t_start) * ((k + 1) / steps)
                u = student.forward_batch(z, tau, tau_next, modes, params=params).numpy()
                z = z - _per_sample(tau - tau_next, z.ndim) * u
        return z

    @staticmethod
    @contract_operation()
    def rc_loss(
        student: VelocityModel,
        teacher: VelocityModel,
        z_t: np.ndarray,
        t: Sequence[float],
        r: Sequence[float],
        modes: Sequence[CondMode],
        c_str: Sequence[np.ndarray],
        c_sem: Sequence[np.ndarray],
        cfg: DistillConfig,
        params: Optional[ModelParams] = None,
        teacher_params: Optional[ModelParams] = None,
    ) -> Tensor:
        """Recursive-consistency loss; its value equals mean(corr^2).

        ``c_str``/``c_sem`` are the full conditions the guided teacher uses;
        the student and its rollout run under ``modes``. The correction is
        computed entirely without gradient, so only the outer ``u`` is
        differentiated.
        """
        t = np.asarray(t, dtype=np.float64)
        r = np.asarray(r, dtype=np.float64)
        _require_r_below_t(t, r)
        z_t = np.asarray(z_t)
        nd = z_t.ndim

        u = student.forward_batch(z_t, t, r, modes, params=params)
        with no_grad():
            u_val = u.numpy().astype(np.float64)
            t_m = np.maximum(t - cfg.delta_t, r)
            v_tea = DistillationService.teacher_guided_velocity(
                teacher, z_t, t, c_str, c_sem, cfg.omega, cfg.alpha_infer, teacher_params
            )
            z_tm = z_t - _per_sample(t - t_m, nd) * v_tea

            u_tar = np.empty_like(u_val)
            rolled = t_m > r
            if np.any(rolled):
                idx = np.flatnonzero(rolled)
                z_r = DistillationService.student_rollout(
                    student,
                    z_tm[idx],
                    t_m[idx],
                    r[idx],
                    [modes[i] for i in idx],
                    cfg.rollout_steps,
                    params,
                )
                u_tar[idx] = (z_tm[idx] - z_r) / _per_sample(t_m[idx] - r[idx], nd)
            if not np.all(rolled):
                idx = np.flatnonzero(~rolled)
                u_tar[idx] = DistillationService.teacher_guided_velocity(
                    teacher,
                    z_tm[idx],
                    t_m[idx],
                    [c_str[i] for i in idx],
                    [c_sem[i] for i in idx],
                    cfg.omega,
                    cfg.alpha_infer,
                    teacher_params,
                )
            c_l, c_r = rc_coefficients(t, r, t_m, cfg)
            corr = rc_correction(
                u_val, u_tar, v_tea, _per_sample(c_l, nd), _per_sample(c_r, nd), cfg.clip
            )
        target = Tensor(u_val - corr, dtype=u.dtype)
        return ops.mean(ops.square(ops.sub(u, target)))

    @staticmethod
    def distill_loss(
        student: VelocityModel,
        params: ModelParams,
        teacher: VelocityModel,
        examples: Sequence[TrainingExample],
        draw: DistillDraw,
        cfg: DistillConfig,
        teacher_params: Optional[ModelParams] = None,
    ) -> Tensor:
        """base + aux_weight * variant loss (variant over samples with r < t)."""
        total = DistillationService.base_loss_from_draw(
            student, params, teacher, examples, draw, cfg, teacher_params
        )
        idx = np.flatnonzero(draw.r < draw.t)
        if idx.size == 0 or cfg.aux_weight == 0.0:
            return total
        z0 = np.stack([examples[i].z0 for i in idx])
        z_t, _ = TrainingService.make_zt(z0, draw.z1[idx], draw.t[idx])
        modes = [draw.modes[i] for i in idx]
        if DistillVariant(cfg.variant) is DistillVariant.SHORTCUT:
            aux = DistillationService.shortcut_loss(
                student, z_t, draw.t[idx], draw.r[idx], modes, params=params
            )
        else:
            aux = DistillationService.rc_loss(
                student,
                teacher,
                z_t,
                draw.t[idx],
                draw.r[idx],
                modes,
                [examples[i].c_str for i in idx],
                [examples[i].c_sem for i in idx],
                cfg,
                params=params,
                teacher_params=teacher_params,
            )
        return ops.add(total, ops.mul(aux, cfg.aux_weight))

    @staticmethod
    @measure_performance(threshold=600.0)
    def distill(
        teacher_ckpt: Optional[Checkpoint],
        corpus: Sequence[Image],
        cfg: DistillConfig,
        encoders: ConditionEncoders,
        degrade: DegradeParams,
        output_dir: Optional[Union[str, Path]] = None,
        teacher: Optional[VelocityModel] = None,
        student: Optional[VelocityModel] = None,
        lr_images: Optional[Sequence[Image]] = None,
        workers: int = 4,
    ) -> DistillResult:
        """Distill a teacher into a one-step student initialised from its weights."""
        require(len(corpus) > 0, "distillation corpus is empty")
        if teacher is None:
            require(teacher_ckpt is not None, "a teacher checkpoint or model is required")
            if CheckpointKind(teacher_ckpt.kind) is not CheckpointKind.TEACHER:
                raise ContractViolationException("distillation needs a teacher checkpoint")
            teacher = teacher_ckpt.model(use_ema=cfg.teacher_use_ema)
        if student is None:
            if not isinstance(teacher, DiffusionTransformer):
                raise ContractViolationException(
                    "a student model is required when the teacher is not a diffusion transformer"
                )
            student = DiffusionTransformer.student_from_teacher(
                teacher, seed=derive_seed(cfg.seed, "student-init")
            )
        require(student.student_mode, "the student must be built in student mode")
        params = student.params
        run_log = logger.with_context(run="distill", variant=DistillVariant(cfg.variant).value)
        out_dir = Path(output_dir) if output_dir is not None else None
        loss_log = LossLog(out_dir / DISTILL_LOG_NAME if out_dir else None)

        lows = list(lr_images) if lr_images is not None else DegradationService.degrade_batch(
            corpus, degrade, derive_seed(cfg.seed, "degrade"), workers
        )
        examples = TrainingService.build_examples(corpus, lows, encoders, workers)
        meta: Dict[str, object] = {
            "distill": cfg.snapshot(),
            "conditioning": encoders.header(),
            "degrade": degrade.snapshot(),
        }
        if teacher_ckpt is not None:
            meta["teacher"] = {"model": teacher_ckpt.config.snapshot(), "step": teacher_ckpt.metadata.get("step")}

        def snapshot(step: int) -> Checkpoint:
            return Checkpoint(
                CheckpointKind.STUDENT, student.config, params.copy(), metadata={**meta, "step": step}
            )

        losses: List[float] = []
        paths: List[Path] = []
        for step in range(1, cfg.steps + 1):
            rng = philox(derive_seed(cfg.seed, "distill-step", step))
            batch = [examples[int(i)] for i in rng.integers(0, len(examples), size=cfg.batch)]
            draw = DistillationService.draw_distill_inputs(rng, batch, cfg)
            try:
                loss, norm = TrainingService.gradient_step(
                    student,
                    params,
                    lambda p: DistillationService.distill_loss(student, p, teacher, batch, draw, cfg),
                    cfg,
                    step,
                )
            except NumericalException as e:
                run_log.error("Distillation aborted", extra={"step": step, "error": e.message})
                raise NumericalException(
                    f"distillation diverged at step {step}: {e.message}",
                    details={"step": step, **e.details},
                ) from e
            losses.append(loss)
            loss_log.write(step, loss)
            run_log.debug("step", extra={"step": step, "loss": loss, "grad_norm": norm})
            if out_dir is not None and step % cfg.checkpoint_every == 0:
                paths.append(CheckpointService.save(snapshot(step), out_dir / f"student_{step:06d}.vsr"))

        final = snapshot(cfg.steps)
        if out_dir is not None:
            paths.append(CheckpointService.save(final, out_dir / STUDENT_CHECKPOINT_NAME))
        run_log.info(
            "Distillation finished",
            extra={"steps": cfg.steps, "initial_loss": losses[0], "final_loss": losses[-1]},
        )
        return DistillResult(final, losses, paths)

    @staticmethod
    @contract_operation()
    def few_step_super_resolve(
        student: VelocityModel,
        lr: Image,
        steps: int,
        seed: int,
        encoders: ConditionEncoders,
        use_ema: bool = True,
    ) -> Image:
        """Student jumps along 1 = tau_0 > ... > tau_K = 0 under the full condition."""
        steps = validate_integer(steps, min_value=1, field_name="steps")
        params = student.params.ema_params() if use_ema and student.params is not None else None
        conds = encoders.conditions(lr)
        mode = CondMode.full(conds.c_str, conds.c_sem)
        z = SamplingService.initial_noise(seed, encoders.latent_shape_for(lr))
        with no_grad():
            for k in range(steps):
                tau, tau_next = 1.0 - k / steps, 1.0 - (k + 1) / steps
                u = student.forward(z, tau, tau_next, mode, params=params)
                z = z - (tau - tau_next) * u
        return encoders.codec.decode(z)

    @staticmethod
    @contract_operation()
    def one_step_super_resolve(
        student: VelocityModel,
        lr: Image,
        seed: int,
        encoders: ConditionEncoders,
        use_ema: bool = True,
    ) -> Image:
        """z0 = z1 - f(z1, 1, 0, Full): a single network evaluation."""
        params = student.params.ema_params() if use_ema and student.params is not None else None
        conds = encoders.conditions(lr)
        z1 = SamplingService.initial_noise(seed, encoders.latent_shape_for(lr))
        with no_grad():
            u = student.forward(z1, 1.0, 0.0, CondMode.full(conds.c_str, conds.c_sem), params=params)
        return encoders.codec.decode(z1 - u)
