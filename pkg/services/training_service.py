from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from models.conditioning import CondMode
from models.enums import CheckpointKind
from models.image import Image
from models.recipes import DegradeParams, ModelConfig, OptimizerSettings, TrainRecipe
from numerics import ops
from numerics.params import ModelParams
from numerics.random import derive_seed, philox
from numerics.tensor import GradContext, Tensor
from services.backbone.checkpoint import Checkpoint, CheckpointService
from services.backbone.contracts import VelocityModel
from services.backbone.network import DiffusionTransformer, init_params
from services.conditioning_service import ConditionEncoders, ConditioningService
from services.degradation_service import DegradationService
from services.image_service import ImageService
from utils.decorators import contract_operation, measure_performance
from utils.exceptions import ContractViolationException, FileOperationException, NumericalException
from utils.system.logger import logger
from utils.validation.validators import require, require_same_shape

LOSS_LOG_NAME = "loss.log"
TEACHER_CHECKPOINT_NAME = "teacher.vsr"


@dataclass(frozen=True)
class TrainingExample:
    """HR latent with the conditions derived from its LR partner."""

    z0: np.ndarray
    c_str: np.ndarray
    c_sem: np.ndarray


@dataclass
class FlowDraw:
    """Noise, times and conditioning modes for one batch."""

    z1: np.ndarray
    t: np.ndarray
    modes: List[CondMode]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: List[float] = field(default_factory=list)
    checkpoint_paths: List[Path] = field(default_factory=list)


class LossLog:
    """Plain ``step <n> loss <f>`` lines, appended as training runs."""

    def __init__(self, path: Optional[Path]):
        self.path = path
        if path is not None:
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text("", encoding="utf-8")
            except OSError as e:
                raise FileOperationException(f"cannot create loss log {path}: {e}")

    def write(self, step: int, loss: float) -> None:
        if self.path is None:
            return
        try:
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(f"step {step} loss {loss:.9g}\n")
        except OSError as e:
            raise FileOperationException(f"cannot append to loss log {self.path}: {e}")


class TrainingService:
    @staticmethod
    def make_zt(z0: np.ndarray, z1: np.ndarray, t: Union[float, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
        """Linear path point ``(1 - t) z0 + t z1`` and its velocity ``z1 - z0``.

        ``t`` may be a scalar or one value per leading batch entry.
        """
        require_same_shape(z0, z1, "z0 and z1")
        t_arr = np.asarray(t, dtype=np.float64)
        if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
            raise ContractViolationException(f"t must lie in [0, 1], got {t}")
        if t_arr.ndim == 1:
            t_arr = t_arr.reshape((-1,) + (1,) * (np.ndim(z0) - 1))
        z_t = (1.0 - t_arr) * z0 + t_arr * z1
        return z_t, z1 - z0

    @staticmethod
    def sample_timesteps(rng: np.random.Generator, count: int) -> np.ndarray:
        """t ~ Uniform(0, 1)."""
        return rng.random(count)

    @staticmethod
    def build_examples(
        hr_images: Sequence[Image],
        lr_images: Sequence[Image],
        encoders: ConditionEncoders,
        workers: int = 4,
    ) -> List[TrainingExample]:
        require(len(hr_images) == len(lr_images), "every HR image needs one LR partner")

        def build(pair: Tuple[Image, Image]) -> TrainingExample:
            hr, lr = pair
            if encoders.hr_size(lr) != hr.size:
                raise ContractViolationException(
                    f"LR {lr.size} x{encoders.scale} does not match HR {hr.size}"
                )
            conds = encoders.conditions(lr)
            return TrainingExample(encoders.codec.encode(hr), conds.c_str, conds.c_sem)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(build, zip(hr_images, lr_images)))

    @staticmethod
    def draw_flow_inputs(
        rng: np.random.Generator, examples: Sequence[TrainingExample], recipe: TrainRecipe
    ) -> FlowDraw:
        """Per sample: z1 ~ N(0, I), t ~ U(0, 1), then the conditioning mode."""
        require(len(examples) > 0, "flow loss needs a nonempty batch")
        z1, ts, modes = [], [], []
        for example in examples:
            z1.append(rng.standard_normal(example.z0.shape))
            ts.append(TrainingService.sample_timesteps(rng, 1)[0])
            modes.append(
                ConditioningService.sample_cond_mode(
                    rng,
                    example.c_str,
                    example.c_sem,
                    recipe.p_partial,
                    recipe.alpha_range,
                    recipe.aux_branch,
                )
            )
        return FlowDraw(np.stack(z1), np.asarray(ts), modes)

    @staticmethod
    def flow_loss_from_draw(
        model: VelocityModel,
        params: Optional[ModelParams],
        examples: Sequence[TrainingExample],
        draw: FlowDraw,
    ) -> Tensor:
        """Mean squared velocity error over elements and batch."""
        z0 = np.stack([e.z0 for e in examples])
        z_t, v_t = TrainingService.make_zt(z0, draw.z1, draw.t)
        prediction = model.forward_batch(z_t, draw.t, draw.t, draw.modes, params=params)
        target = Tensor(v_t, dtype=prediction.dtype)
        return ops.mean(ops.square(ops.sub(prediction, target)))

    @staticmethod
    @contract_operation()
    def flow_loss(
        model: VelocityModel,
        params: Optional[ModelParams],
        examples: Sequence[TrainingExample],
        rng: np.random.Generator,
        recipe: TrainRecipe,
    ) -> Tensor:
        draw = TrainingService.draw_flow_inputs(rng, examples, recipe)
        return TrainingService.flow_loss_from_draw(model, params, examples, draw)

    @staticmethod
    def optimizer_step(
        params: ModelParams,
        grads: Dict[str, np.ndarray],
        settings: OptimizerSettings,
        step_index: int,
        lr: Optional[float] = None,
    ) -> float:
        """Clip to the global norm, apply AdamW with bias correction, update the EMA.

        ``step_index`` is 1-based. Returns the pre-clip global gradient norm.
        """
        require(step_index >= 1, f"step index is 1-based, got {step_index}")
        lr = settings.lr if lr is None else lr
        for name, grad in grads.items():
            if not np.all(np.isfinite(grad)):
                raise NumericalException(
                    f"non-finite gradient for {name} at step {step_index}",
                    details={"step": step_index, "parameter": name},
                )
        norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
        clip = min(1.0, settings.grad_clip / norm) if norm > 0.0 else 1.0

        b1, b2 = settings.beta1, settings.beta2
        correction1 = 1.0 - b1**step_index
        correction2 = 1.0 - b2**step_index
        decay = 1.0 - lr * settings.weight_decay
        for name in params.names():
            param = params[name].data
            grad = np.asarray(grads.get(name, np.zeros_like(param)), dtype=param.dtype) * clip
            m = params.first_moment.get(name, np.zeros_like(param))
            v = params.second_moment.get(name, np.zeros_like(param))
            m = b1 * m + (1.0 - b1) * grad
            v = b2 * v + (1.0 - b2) * grad * grad
            params.first_moment[name] = m
            params.second_moment[name] = v
            update = (m / correction1) / (np.sqrt(v / correction2) + settings.eps)
            new_value = param * decay - lr * update
            params.set(name, new_value)
            params.grads[name] = grad
            params.ema[name] = settings.ema_decay * params.ema[name] + (1.0 - settings.ema_decay) * params[name].data
        return norm

    @staticmethod
    def gradient_step(
        model: VelocityModel,
        params: ModelParams,
        loss_fn,
        settings: OptimizerSettings,
        step_index: int,
        lr: Optional[float] = None,
    ) -> Tuple[float, float]:
        """Differentiate ``loss_fn(params)`` and apply one optimizer step."""
        with GradContext() as ctx:
            ctx.watch(*params.tensors())
            loss = loss_fn(params)
            grads = ctx.gradients(loss, params.tensors())
        value = loss.item()
        norm = TrainingService.optimizer_step(
            params, dict(zip(params.names(), grads)), settings, step_index, lr=lr
        )
        return value, norm

    @staticmethod
    def _stages(
        corpus: Sequence[Image], recipe: TrainRecipe
    ) -> List[Tuple[str, Sequence[Image], int, float]]:
        stages = []
        if recipe.progressive_steps > 0:
            half = [ImageService.downsample(img, 2) for img in corpus]
            stages.append(("half", half, recipe.progressive_steps, recipe.lr))
            stages.append(("full", corpus, recipe.steps, recipe.lr * recipe.progressive_lr_scale))
        else:
            stages.append(("full", corpus, recipe.steps, recipe.lr))
        return stages

    @staticmethod
    def _online_examples(
        corpus: Sequence[Image],
        indices: np.ndarray,
        degrade: DegradeParams,
        encoders: ConditionEncoders,
        seed: int,
        step: int,
    ) -> List[TrainingExample]:
        hr = [corpus[int(i)] for i in indices]
        lr = [
            DegradationService.degrade_pipeline(img, degrade, derive_seed(seed, "online", step, j))
            for j, img in enumerate(hr)
        ]
        return TrainingService.build_examples(hr, lr, encoders, workers=1)

    @staticmethod
    @measure_performance(threshold=600.0)
    def train(
        corpus: Sequence[Image],
        recipe: TrainRecipe,
        config: ModelConfig,
        encoders: ConditionEncoders,
        degrade: DegradeParams,
        output_dir: Optional[Union[str, Path]] = None,
        lr_images: Optional[Sequence[Image]] = None,
        metadata: Optional[Dict[str, object]] = None,
    ) -> TrainResult:
        """Flow-matching training at a constant learning rate per stage, no warm-up."""
        require(len(corpus) > 0, "training corpus is empty")
        if lr_images is not None:
            require(len(lr_images) == len(corpus), "lr_images must pair one-to-one with the corpus")
        out_dir = Path(output_dir) if output_dir is not None else None
        run_log = logger.with_context(run="train", seed=recipe.seed)
        loss_log = LossLog(out_dir / LOSS_LOG_NAME if out_dir else None)

        model = DiffusionTransformer(config, init_params(config, derive_seed(recipe.seed, "init")))
        params = model.params
        meta = {
            "recipe": recipe.snapshot(),
            "conditioning": encoders.header(),
            "degrade": degrade.snapshot(),
            **(metadata or {}),
        }

        def snapshot(step: int) -> Checkpoint:
            return Checkpoint(
                CheckpointKind.TEACHER, config, params.copy(), metadata={**meta, "step": step}
            )

        losses: List[float] = []
        paths: List[Path] = []
        step = 0
        for stage, images, stage_steps, stage_lr in TrainingService._stages(corpus, recipe):
            examples: List[TrainingExample] = []
            if not recipe.online_degradation:
                if stage == "full" and lr_images is not None:
                    lows = list(lr_images)
                else:
                    lows = DegradationService.degrade_batch(
                        images, degrade, derive_seed(recipe.seed, "degrade", stage), recipe.workers
                    )
                examples = TrainingService.build_examples(images, lows, encoders, recipe.workers)
            run_log.info(
                "Training stage started",
                extra={"stage": stage, "steps": stage_steps, "lr": stage_lr, "images": len(images)},
            )

            for _ in range(stage_steps):
                step += 1
                rng = philox(derive_seed(recipe.seed, "step", step))
                indices = rng.integers(0, len(images), size=recipe.batch)
                if recipe.online_degradation:
                    batch = TrainingService._online_examples(
                        images, indices, degrade, encoders, recipe.seed, step
                    )
                else:
                    batch = [examples[int(i)] for i in indices]
                draw = TrainingService.draw_flow_inputs(rng, batch, recipe)
                try:
                    loss, norm = TrainingService.gradient_step(
                        model,
                        params,
                        lambda p: TrainingService.flow_loss_from_draw(model, p, batch, draw),
                        recipe,
                        step,
                        lr=stage_lr,
                    )
                except NumericalException as e:
                    run_log.error("Training aborted", extra={"step": step, "error": e.message})
                    raise NumericalException(
                        f"training diverged at step {step}: {e.message}",
                        details={"step": step, **e.details},
                    ) from e
                losses.append(loss)
                loss_log.write(step, loss)
                run_log.debug("step", extra={"step": step, "loss": loss, "grad_norm": norm})

                if out_dir is not None and step % recipe.checkpoint_every == 0:
                    paths.append(CheckpointService.save(snapshot(step), out_dir / f"checkpoint_{step:06d}.vsr"))

        final = snapshot(step)
        if out_dir is not None:
            paths.append(CheckpointService.save(final, out_dir / TEACHER_CHECKPOINT_NAME))
        run_log.info(
            "Training finished",
            extra={"steps": step, "initial_loss": losses[0], "final_loss": losses[-1]},
        )
        return TrainResult(final, losses, paths)
