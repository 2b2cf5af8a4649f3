from typing import Any, Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.enums import (
    AuxBranch,
    DistillVariant,
    GuidanceStyle,
    RcCoefficients,
)


class _Record(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", use_enum_values=False)

    def snapshot(self) -> Dict[str, Any]:
        """JSON-ready dict (enums by value, tuples as lists)."""
        return self.model_dump(mode="json")


class DegradeParams(_Record):
    """Ranges of the simplified two-stage degradation chain."""

    blur_sigma: Tuple[float, float] = (0.1, 1.2)
    noise_sigma: Tuple[float, float] = (0.0, 0.05)
    jpeg_quality: Tuple[int, int] = (30, 95)
    scale: int = Field(default=4, ge=2)
    second_stage: bool = False

    @field_validator("blur_sigma", "noise_sigma")
    @classmethod
    def check_non_negative_range(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = value
        if lo < 0 or lo > hi:
            raise ValueError(f"range must satisfy 0 <= lo <= hi, got {value}")
        return value

    @field_validator("jpeg_quality")
    @classmethod
    def check_quality_range(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        lo, hi = value
        if not 1 <= lo <= hi <= 100:
            raise ValueError(f"jpeg quality range must satisfy 1 <= lo <= hi <= 100, got {value}")
        return value

    def draw(self, rng: np.random.Generator) -> Tuple[float, float, int]:
        """One (blur sigma, noise sigma, quality) draw; consumes exactly three variates."""
        blur = float(rng.uniform(*self.blur_sigma))
        noise = float(rng.uniform(*self.noise_sigma))
        quality = int(rng.integers(self.jpeg_quality[0], self.jpeg_quality[1] + 1))
        return blur, noise, quality


class ModelConfig(_Record):
    """Miniature diffusion transformer hyperparameters."""

    dim: int = Field(default=128, ge=4)
    depth: int = Field(default=4, ge=1)
    heads: int = Field(default=4, ge=1)
    patch: int = Field(default=2, ge=1)
    mlp_ratio: int = Field(default=4, ge=1)
    d_sem: int = Field(default=64, ge=2)
    latent_channels: int = Field(default=48, ge=1)
    freq_dim: int = Field(default=64, ge=2)
    max_tokens: int = Field(default=1024, ge=1)
    student_mode: bool = False
    semantic_enabled: bool = True

    @model_validator(mode="after")
    def check_shapes(self) -> "ModelConfig":
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} must be divisible by heads {self.heads}")
        if self.dim % 4 != 0:
            raise ValueError(f"dim {self.dim} must be divisible by 4 for 2-D positional features")
        if self.freq_dim % 2 != 0:
            raise ValueError(f"freq_dim {self.freq_dim} must be even")
        return self

    def as_student(self) -> "ModelConfig":
        return self.model_copy(update={"student_mode": True})


class OptimizerSettings(_Record):
    """AdamW with global-norm clipping and an EMA shadow."""

    lr: float = Field(default=1.0e-4, gt=0)
    beta1: float = Field(default=0.9, gt=0, lt=1)
    beta2: float = Field(default=0.95, gt=0, lt=1)
    weight_decay: float = Field(default=0.01, ge=0)
    grad_clip: float = Field(default=1.0, gt=0)
    ema_decay: float = Field(default=0.9999, gt=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    lr_schedule: str = "constant"
    warmup_steps: int = Field(default=0, ge=0, le=0)

    @field_validator("lr_schedule")
    @classmethod
    def check_constant_schedule(cls, value: str) -> str:
        if value != "constant":
            raise ValueError("only the constant learning-rate schedule is supported")
        return value


def _check_alpha_range(value: Tuple[float, float]) -> Tuple[float, float]:
    lo, hi = value
    if not 0.0 < lo <= hi < 1.0:
        raise ValueError(f"alpha range must satisfy 0 < lo <= hi < 1, got {value}")
    return value


class TrainRecipe(OptimizerSettings):
    steps: int = Field(default=2000, ge=1)
    batch: int = Field(default=8, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    p_partial: float = Field(default=0.1, ge=0, le=1)
    alpha_range: Tuple[float, float] = (0.05, 0.25)
    aux_branch: AuxBranch = AuxBranch.PARTIAL
    checkpoint_every: int = Field(default=500, ge=1)
    progressive_steps: int = Field(default=0, ge=0)
    progressive_lr_scale: float = Field(default=0.5, gt=0)
    online_degradation: bool = False
    workers: int = Field(default=4, ge=1)

    @field_validator("alpha_range")
    @classmethod
    def check_alpha_range(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        return _check_alpha_range(value)


class GuidanceConfig(_Record):
    scale: float = Field(default=1.0, ge=0)
    alpha_infer: float = Field(default=0.15, gt=0, lt=1)
    style: GuidanceStyle = GuidanceStyle.RESTORATION


class SampleConfig(_Record):
    steps: int = Field(default=25, ge=1)
    guidance: GuidanceConfig = GuidanceConfig()
    seed: int = Field(default=0, ge=0, lt=2**64)
    use_ema: bool = True
    student_steps: int = Field(default=1, ge=1)


class DistillConfig(OptimizerSettings):
    lr: float = Field(default=2.0e-5, gt=0)
    omega: float = Field(default=1.5, ge=0)
    variant: DistillVariant = DistillVariant.RC
    delta_t: float = Field(default=0.25, gt=0)
    rollout_steps: int = Field(default=4, ge=1)
    c_l: float = 1.0
    c_r: float = 1.0
    rc_coefficients: RcCoefficients = RcCoefficients.TIME_WEIGHTED
    clip: float = Field(default=1.0, gt=0)
    aux_weight: float = Field(default=1.0, ge=0)
    p_r_equals_t: float = Field(default=0.25, ge=0, le=1)
    alpha_infer: float = Field(default=0.15, gt=0, lt=1)
    p_partial: float = Field(default=0.1, ge=0, le=1)
    alpha_range: Tuple[float, float] = (0.05, 0.25)
    steps: int = Field(default=1000, ge=1)
    batch: int = Field(default=8, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    checkpoint_every: int = Field(default=500, ge=1)
    teacher_use_ema: bool = True

    @field_validator("alpha_range")
    @classmethod
    def check_alpha_range(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        return _check_alpha_range(value)

    @property
    def clip_range(self) -> Tuple[float, float]:
        return -self.clip, self.clip
