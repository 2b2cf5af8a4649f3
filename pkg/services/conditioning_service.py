"""LR-derived conditions, conditioning-mode sampling and guidance combiners.

The structural condition is the LR image nearest-upsampled to the HR grid and
pushed through the latent codec, so it lives on the same grid as ``z_t``.
Semantic tokens come from a frozen patch projection of the LR image.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from models.conditioning import CondMode
from models.enums import AuxBranch, GuidanceStyle, ResizeMode
from models.image import Image
from models.recipes import GuidanceConfig
from numerics.random import derive_seed, philox
from services.image_service import ImageService
from utils.decorators import contract_operation
from utils.exceptions import ContractViolationException
from utils.validation.validators import (
    require,
    require_divisible,
    require_same_shape,
    validate_float,
)

DEFAULT_FOLD = 4
DEFAULT_SEMANTIC_PATCH = 4
DEFAULT_SEMANTIC_DIM = 64
LATENT_MEAN = 0.0
# a power of two keeps the affine exactly invertible
LATENT_STD = 0.5
SEMANTIC_LN_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class LatentCodec:
    """Space-to-depth fold followed by a per-channel affine normalization."""

    fold: int = DEFAULT_FOLD
    channels: int = 3
    mean: np.ndarray = field(default=None)
    std: np.ndarray = field(default=None)

    def __post_init__(self):
        require(self.fold >= 1, f"fold factor must be >= 1, got {self.fold}")
        n = self.latent_channels
        mean = np.full(n, LATENT_MEAN) if self.mean is None else np.asarray(self.mean, float)
        std = np.full(n, LATENT_STD) if self.std is None else np.asarray(self.std, float)
        require(mean.shape == (n,) and std.shape == (n,), "normalization constants must match latent channels")
        require(bool(np.all(std > 0)), "normalization std must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def latent_channels(self) -> int:
        return self.channels * self.fold * self.fold

    def latent_shape(self, height: int, width: int) -> Tuple[int, int, int]:
        require_divisible(height, self.fold, "image height")
        require_divisible(width, self.fold, "image width")
        return height // self.fold, width // self.fold, self.latent_channels

    def encode(self, img: Image) -> np.ndarray:
        """h x w x (C f^2) latent of ``img``."""
        if img.channels != self.channels:
            raise ContractViolationException(
                f"codec expects {self.channels} channel(s), got {img.channels}"
            )
        h, w, c = self.latent_shape(img.height, img.width)
        f = self.fold
        folded = (
            img.pixels.reshape(h, f, w, f, self.channels)
            .transpose(0, 2, 1, 3, 4)
            .reshape(h, w, c)
        )
        return (folded - self.mean) / self.std

    def decode_array(self, z: np.ndarray) -> np.ndarray:
        """Unclamped pixel array of a latent."""
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 3 or z.shape[-1] != self.latent_channels:
            raise ContractViolationException(
                f"latent must be h x w x {self.latent_channels}, got {z.shape}"
            )
        h, w, _ = z.shape
        f = self.fold
        pixels = z * self.std + self.mean
        return (
            pixels.reshape(h, w, f, f, self.channels)
            .transpose(0, 2, 1, 3, 4)
            .reshape(h * f, w * f, self.channels)
        )

    def decode(self, z: np.ndarray) -> Image:
        return Image(np.clip(self.decode_array(z), 0.0, 1.0))

    def header(self) -> Dict[str, Any]:
        return {
            "fold": self.fold,
            "channels": self.channels,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
        }


class SemanticEncoder:
    """Frozen random projection of non-overlapping LR patches, layer-normalized.

    Weights are plain arrays and never enter a gradient context.
    """

    def __init__(
        self,
        patch: int = DEFAULT_SEMANTIC_PATCH,
        dim: int = DEFAULT_SEMANTIC_DIM,
        seed: int = 0,
        channels: int = 3,
    ):
        require(patch >= 1, f"semantic patch must be >= 1, got {patch}")
        require(dim >= 2, f"semantic dim must be >= 2, got {dim}")
        self.patch = patch
        self.dim = dim
        self.seed = seed
        self.channels = channels
        fan_in = patch * patch * channels
        rng = philox(derive_seed(seed, "semantic-projection"))
        weights = rng.standard_normal((fan_in, dim)) / np.sqrt(fan_in)
        weights.flags.writeable = False
        self.weights = weights

    def token_count(self, height: int, width: int) -> int:
        return (height // self.patch) * (width // self.patch)

    def encode(self, lr: Image) -> np.ndarray:
        """(H/p * W/p) x d_sem tokens in row-major patch order."""
        p = self.patch
        if lr.height % p != 0 or lr.width % p != 0:
            raise ContractViolationException(
                f"LR size {lr.height}x{lr.width} is not divisible by semantic patch {p}"
            )
        if lr.channels != self.channels:
            raise ContractViolationException(
                f"semantic encoder expects {self.channels} channel(s), got {lr.channels}"
            )
        gh, gw = lr.height // p, lr.width // p
        patches = (
            lr.pixels.reshape(gh, p, gw, p, self.channels)
            .transpose(0, 2, 1, 3, 4)
            .reshape(gh * gw, p * p * self.channels)
        )
        tokens = patches @ self.weights
        centred = tokens - tokens.mean(axis=-1, keepdims=True)
        var = np.mean(centred * centred, axis=-1, keepdims=True)
        return centred / np.sqrt(var + SEMANTIC_LN_EPS)

    def header(self) -> Dict[str, Any]:
        return {"patch": self.patch, "dim": self.dim, "seed": self.seed, "channels": self.channels}


@dataclass(frozen=True)
class Conditions:
    """Both LR-derived conditions for one image."""

    c_str: np.ndarray
    c_sem: np.ndarray


class ConditionEncoders:
    """Codec, semantic encoder and SR scale used together by train/sample/distill."""

    def __init__(self, codec: LatentCodec, semantic: SemanticEncoder, scale: int):
        require(scale >= 1, f"scale must be >= 1, got {scale}")
        self.codec = codec
        self.semantic = semantic
        self.scale = scale

    def hr_size(self, lr: Image) -> Tuple[int, int]:
        return lr.height * self.scale, lr.width * self.scale

    def latent_shape_for(self, lr: Image) -> Tuple[int, int, int]:
        return self.codec.latent_shape(*self.hr_size(lr))

    def conditions(self, lr: Image) -> Conditions:
        c_str = ConditioningService.make_structural_condition(lr, self.hr_size(lr), self.codec)
        return Conditions(c_str=c_str, c_sem=self.semantic.encode(lr))

    def header(self) -> Dict[str, Any]:
        return {"codec": self.codec.header(), "semantic": self.semantic.header(), "scale": self.scale}

    @classmethod
    def from_header(cls, header: Dict[str, Any]) -> "ConditionEncoders":
        codec_h, sem_h = header["codec"], header["semantic"]
        codec = LatentCodec(
            fold=codec_h["fold"],
            channels=codec_h["channels"],
            mean=np.asarray(codec_h["mean"]),
            std=np.asarray(codec_h["std"]),
        )
        semantic = SemanticEncoder(
            patch=sem_h["patch"], dim=sem_h["dim"], seed=sem_h["seed"], channels=sem_h["channels"]
        )
        return cls(codec, semantic, header["scale"])


class ConditioningService:
    @staticmethod
    def encode_latent(img: Image, codec: Optional[LatentCodec] = None) -> np.ndarray:
        return (codec or LatentCodec(channels=img.channels)).encode(img)

    @staticmethod
    def decode_latent(z: np.ndarray, codec: LatentCodec) -> Image:
        return codec.decode(z)

    @staticmethod
    @contract_operation()
    def make_structural_condition(
        lr: Image, hr_size: Tuple[int, int], codec: LatentCodec
    ) -> np.ndarray:
        """Nearest-upsample the LR image to ``hr_size`` and encode it."""
        hr_h, hr_w = hr_size
        if hr_h % lr.height != 0 or hr_w % lr.width != 0 or hr_h // lr.height != hr_w // lr.width:
            raise ContractViolationException(
                f"HR size {hr_h}x{hr_w} is not an integer multiple of LR size "
                f"{lr.height}x{lr.width}"
            )
        upsampled = ImageService.resize(lr, hr_h, hr_w, ResizeMode.NEAREST)
        return codec.encode(upsampled)

    @staticmethod
    def encode_semantic(lr: Image, encoder: SemanticEncoder) -> np.ndarray:
        return encoder.encode(lr)

    @staticmethod
    def sample_cond_mode(
        rng: np.random.Generator,
        c_str: np.ndarray,
        c_sem: Optional[np.ndarray],
        p_partial: float,
        alpha_range: Tuple[float, float],
        aux_branch: AuxBranch = AuxBranch.PARTIAL,
    ) -> CondMode:
        """Full with probability 1 - p_partial, otherwise the auxiliary branch.

        Exactly two variates are drawn per call so streams stay aligned
        whatever branch is chosen.
        """
        p_partial = validate_float(p_partial, 0.0, 1.0, field_name="p_partial")
        lo, hi = alpha_range
        require(0.0 < lo <= hi < 1.0, f"alpha range must satisfy 0 < lo <= hi < 1, got {alpha_range}")
        pick = rng.random()
        alpha = rng.uniform(lo, hi)
        if pick >= p_partial:
            return CondMode.full(c_str, c_sem)
        if AuxBranch(aux_branch) is AuxBranch.UNCONDITIONAL:
            return CondMode.unconditional(np.shape(c_str))
        return CondMode.partial(c_str, alpha)

    @staticmethod
    def auxiliary_mode(
        style: GuidanceStyle, c_str: np.ndarray, alpha_infer: float
    ) -> Optional[CondMode]:
        """The second branch each guidance style evaluates (None for ``none``)."""
        style = GuidanceStyle(style)
        if style is GuidanceStyle.RESTORATION:
            return CondMode.partial(c_str, alpha_infer)
        if style is GuidanceStyle.T2I_BASELINE:
            return CondMode.no_semantic(c_str)
        if style is GuidanceStyle.STANDARD_CFG:
            return CondMode.unconditional(np.shape(c_str))
        return None

    @staticmethod
    def _combine(v_cond: np.ndarray, v_aux: np.ndarray, scale: float) -> np.ndarray:
        # algebraically v_aux + s (v_cond - v_aux); this form keeps s = 0 and s = 1 exact
        require_same_shape(v_cond, v_aux, "guidance branches")
        v_cond = np.asarray(v_cond)
        return (1.0 - scale) * np.asarray(v_aux) + scale * v_cond

    @staticmethod
    def guide(v_cond: np.ndarray, v_pcond: np.ndarray, cfg: GuidanceConfig) -> np.ndarray:
        """Restoration-oriented guidance v_pcond + s (v_cond - v_pcond)."""
        if GuidanceStyle(cfg.style) is GuidanceStyle.NONE:
            require_same_shape(v_cond, v_pcond, "guidance branches")
            return np.array(v_cond)
        return ConditioningService._combine(v_cond, v_pcond, cfg.scale)

    @staticmethod
    def guide_t2i_baseline(v_full: np.ndarray, v_nosem: np.ndarray, scale: float) -> np.ndarray:
        """Text-to-image style guidance where both branches share the LR structure."""
        return ConditioningService._combine(v_full, v_nosem, scale)

    @staticmethod
    def guide_standard_cfg(v_cond: np.ndarray, v_uncond: np.ndarray, scale: float) -> np.ndarray:
        return ConditioningService._combine(v_cond, v_uncond, scale)

    @staticmethod
    def combine_for_style(
        style: GuidanceStyle, v_cond: np.ndarray, v_aux: Optional[np.ndarray], scale: float
    ) -> np.ndarray:
        style = GuidanceStyle(style)
        if style is GuidanceStyle.NONE or v_aux is None:
            return np.array(v_cond)
        if style is GuidanceStyle.T2I_BASELINE:
            return ConditioningService.guide_t2i_baseline(v_cond, v_aux, scale)
        if style is GuidanceStyle.STANDARD_CFG:
            return ConditioningService.guide_standard_cfg(v_cond, v_aux, scale)
        return ConditioningService._combine(v_cond, v_aux, scale)

    @staticmethod
    def stack_modes(modes: Sequence[CondMode]) -> np.ndarray:
        return np.stack([m.c_str for m in modes])
