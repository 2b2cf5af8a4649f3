"""Miniature diffusion transformer.

Token pipeline per forward:

    concat(z_t, c_str) -> patchify -> linear + 2-D sincos positions
    -> depth x [adaLN self-attention, adaLN cross-attention over semantic
       tokens, adaLN MLP] -> adaLN final norm -> zero-initialised head
    -> unpatchify

Time conditioning is ``embed_t(t)`` (plus ``embed_r(r)`` in student mode)
and drives every modulation. Samples whose mode carries no semantic tokens
attend to the learned null token instead.
"""

import math
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from models.conditioning import CondMode
from models.recipes import ModelConfig
from numerics import ops
from numerics.params import ModelParams
from numerics.random import derive_seed, philox
from numerics.tensor import ArrayLike, Tensor, get_dtype
from services.backbone.contracts import VelocityModel
from utils.exceptions import ContractViolationException
from utils.validation.validators import require

TIME_SCALE = 1000.0
MAX_PERIOD = 10000.0
MOD_CHUNKS = 9
MOD_INIT_STD = 0.02


def timestep_features(t: ArrayLike, dim: int) -> np.ndarray:
    """Interleaved ``[sin, cos]`` features of ``t`` on a geometric frequency ladder.

    ``omega_i = 1000 * 10000^(-i / (dim/2))``; entry ``2i`` is
    ``sin(omega_i t)`` and ``2i + 1`` is ``cos(omega_i t)``.
    """
    if dim % 2 != 0:
        raise ContractViolationException(f"timestep feature dim must be even, got {dim}")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    omega = frequency_ladder(dim)
    angles = t[:, None] * omega[None, :]
    out = np.empty((t.shape[0], dim))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def frequency_ladder(dim: int) -> np.ndarray:
    half = dim // 2
    return TIME_SCALE * MAX_PERIOD ** (-np.arange(half, dtype=np.float64) / half)


@lru_cache(maxsize=32)
def _sincos_2d(grid_h: int, grid_w: int, dim: int) -> np.ndarray:
    quarter = dim // 4
    omega = 1.0 / MAX_PERIOD ** (np.arange(quarter, dtype=np.float64) / quarter)
    ys, xs = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")
    ay = ys.reshape(-1, 1) * omega[None, :]
    ax = xs.reshape(-1, 1) * omega[None, :]
    emb = np.concatenate([np.sin(ay), np.cos(ay), np.sin(ax), np.cos(ax)], axis=1)
    emb.flags.writeable = False
    return emb


def positional_embedding(grid_h: int, grid_w: int, dim: int) -> np.ndarray:
    """Fixed 2-D sinusoidal embedding, one row per token (row-major grid)."""
    require(dim % 4 == 0, f"positional embedding dim must be divisible by 4, got {dim}")
    return _sincos_2d(grid_h, grid_w, dim)


def parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    d, p, c = config.dim, config.patch, config.latent_channels
    hidden = d * config.mlp_ratio
    shapes: Dict[str, Tuple[int, ...]] = {
        "patch_embed.weight": (p * p * 2 * c, d),
        "patch_embed.bias": (d,),
        "t_embed.fc1.weight": (config.freq_dim, d),
        "t_embed.fc1.bias": (d,),
        "t_embed.fc2.weight": (d, d),
        "t_embed.fc2.bias": (d,),
    }
    if config.student_mode:
        shapes.update(
            {
                "r_embed.fc1.weight": (config.freq_dim, d),
                "r_embed.fc1.bias": (d,),
                "r_embed.fc2.weight": (d, d),
                "r_embed.fc2.bias": (d,),
            }
        )
    shapes["null_token"] = (1, config.d_sem)
    for i in range(config.depth):
        b = f"blocks.{i}"
        shapes.update(
            {
                f"{b}.mod.weight": (d, MOD_CHUNKS * d),
                f"{b}.mod.bias": (MOD_CHUNKS * d,),
                f"{b}.attn.qkv.weight": (d, 3 * d),
                f"{b}.attn.qkv.bias": (3 * d,),
                f"{b}.attn.proj.weight": (d, d),
                f"{b}.attn.proj.bias": (d,),
                f"{b}.cross.q.weight": (d, d),
                f"{b}.cross.q.bias": (d,),
                f"{b}.cross.kv.weight": (config.d_sem, 2 * d),
                f"{b}.cross.kv.bias": (2 * d,),
                f"{b}.cross.proj.weight": (d, d),
                f"{b}.cross.proj.bias": (d,),
                f"{b}.mlp.fc1.weight": (d, hidden),
                f"{b}.mlp.fc1.bias": (hidden,),
                f"{b}.mlp.fc2.weight": (hidden, d),
                f"{b}.mlp.fc2.bias": (d,),
            }
        )
    shapes.update(
        {
            "final.mod.weight": (d, 2 * d),
            "final.mod.bias": (2 * d,),
            "final.head.weight": (d, p * p * c),
            "final.head.bias": (p * p * c,),
        }
    )
    return shapes


def parameter_count(config: ModelConfig) -> int:
    """Closed-form scalar parameter count."""
    d, p, c, s = config.dim, config.patch, config.latent_channels, config.d_sem
    hidden = d * config.mlp_ratio
    time_mlp = config.freq_dim * d + d + d * d + d
    per_block = (
        (d * MOD_CHUNKS * d + MOD_CHUNKS * d)
        + (d * 3 * d + 3 * d)
        + (d * d + d)
        + (d * d + d)
        + (s * 2 * d + 2 * d)
        + (d * d + d)
        + (d * hidden + hidden)
        + (hidden * d + d)
    )
    total = (
        (p * p * 2 * c * d + d)
        + time_mlp * (2 if config.student_mode else 1)
        + s
        + config.depth * per_block
        + (d * 2 * d + 2 * d)
        + (d * p * p * c + p * p * c)
    )
    return total


def _is_zero_init(name: str) -> bool:
    return name.startswith("final.head.") or name.startswith("r_embed.fc2.")


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Deterministic initialisation; the head (and r-path output) start at zero."""
    dtype = get_dtype()
    tensors: Dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        rng = philox(derive_seed(seed, name))
        if name.endswith(".bias") or _is_zero_init(name):
            value = np.zeros(shape)
        elif name == "null_token":
            value = rng.standard_normal(shape)
        elif name.endswith("mod.weight"):
            value = MOD_INIT_STD * rng.standard_normal(shape)
        else:
            value = rng.standard_normal(shape) / math.sqrt(shape[0])
        tensors[name] = Tensor(value, name=name, dtype=dtype)
    return ModelParams(tensors)


class DiffusionTransformer(VelocityModel):
    def __init__(
        self, config: ModelConfig, params: Optional[ModelParams] = None, seed: int = 0
    ):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        missing = set(parameter_shapes(config)) - set(self.params.names())
        if missing:
            raise ContractViolationException(
                f"parameters missing for this config: {sorted(missing)[:3]}"
            )

    @classmethod
    def student_from_teacher(
        cls, teacher: "DiffusionTransformer", seed: int = 0, use_ema: bool = False
    ) -> "DiffusionTransformer":
        """Student sharing the teacher's weights, with a fresh r-path whose output is zero."""
        config = teacher.config.as_student()
        source = teacher.params.ema_params() if use_ema else teacher.params
        fresh = init_params(config, seed)
        extra = {n: fresh[n] for n in fresh.names() if n.startswith("r_embed.")}
        base = source if not teacher.config.student_mode else ModelParams(
            {n: t for n, t in source.items() if not n.startswith("r_embed.")}
        )
        merged = base.extended(extra)
        # fresh tensor objects: the student must never alias teacher weights
        return cls(
            config,
            ModelParams({n: Tensor(merged[n], dtype=merged[n].dtype) for n in parameter_shapes(config)}),
        )

    # -- pieces ---------------------------------------------------------

    def _patchify(self, x: Tensor) -> Tensor:
        b, h, w, c = x.shape
        p = self.config.patch
        x = ops.reshape(x, (b, h // p, p, w // p, p, c))
        x = ops.transpose(x, (0, 1, 3, 2, 4, 5))
        return ops.reshape(x, (b, (h // p) * (w // p), p * p * c))

    def _unpatchify(self, y: Tensor, h: int, w: int) -> Tensor:
        b = y.shape[0]
        p, c = self.config.patch, self.config.latent_channels
        y = ops.reshape(y, (b, h // p, w // p, p, p, c))
        y = ops.transpose(y, (0, 1, 3, 2, 4, 5))
        return ops.reshape(y, (b, h, w, c))

    def timestep_embedding(
        self, params: ModelParams, t: Sequence[float], prefix: str = "t_embed"
    ) -> Tensor:
        feats = Tensor(timestep_features(t, self.config.freq_dim), dtype=params[f"{prefix}.fc1.weight"].dtype)
        hidden = ops.silu(ops.linear(feats, params[f"{prefix}.fc1.weight"], params[f"{prefix}.fc1.bias"]))
        return ops.linear(hidden, params[f"{prefix}.fc2.weight"], params[f"{prefix}.fc2.bias"])

    def _semantic_context(
        self, params: ModelParams, modes: Sequence[CondMode], dtype
    ) -> Tensor:
        d_sem = self.config.d_sem
        use_null = [m.uses_null_token or not self.config.semantic_enabled for m in modes]
        present = [m.c_sem for m, null in zip(modes, use_null) if not null]
        count = np.shape(present[0])[0] if present else 1
        sem = np.zeros((len(modes), count, d_sem))
        for i, (mode, null) in enumerate(zip(modes, use_null)):
            if null:
                continue
            tokens = np.asarray(mode.c_sem)
            if tokens.shape != (count, d_sem):
                raise ContractViolationException(
                    f"semantic tokens must be {count} x {d_sem} across the batch, got {tokens.shape}"
                )
            sem[i] = tokens
        mask = np.asarray(use_null, dtype=np.float64).reshape(-1, 1, 1)
        keep = Tensor(sem * (1.0 - mask), dtype=dtype)
        # null token tiled over every position of masked samples
        return ops.add(keep, ops.mul(params["null_token"], Tensor(mask, dtype=dtype)))

    def _split_heads(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        heads = self.config.heads
        return ops.transpose(ops.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))

    def _merge_heads(self, x: Tensor) -> Tensor:
        b, heads, n, dh = x.shape
        return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (b, n, heads * dh))

    def _attend(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        q, k, v = self._split_heads(q), self._split_heads(k), self._split_heads(v)
        scale = 1.0 / math.sqrt(q.shape[-1])
        scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), scale)
        return self._merge_heads(ops.matmul(ops.softmax(scores, axis=-1), v))

    @staticmethod
    def _modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
        return ops.add(ops.mul(ops.layernorm(x), ops.add(scale, 1.0)), shift)

    def _chunks(self, mod: Tensor, count: int) -> List[Tensor]:
        d = self.config.dim
        b = mod.shape[0]
        return [
            ops.reshape(ops.slice_axis(mod, k * d, (k + 1) * d, axis=-1), (b, 1, d))
            for k in range(count)
        ]

    def _block(
        self, params: ModelParams, index: int, x: Tensor, cond: Tensor, ctx: Tensor
    ) -> Tensor:
        pre = f"blocks.{index}"
        d = self.config.dim
        mod = ops.linear(cond, params[f"{pre}.mod.weight"], params[f"{pre}.mod.bias"])
        sh1, sc1, g1, sh2, sc2, g2, sh3, sc3, g3 = self._chunks(mod, MOD_CHUNKS)

        h = self._modulate(x, sh1, sc1)
        qkv = ops.linear(h, params[f"{pre}.attn.qkv.weight"], params[f"{pre}.attn.qkv.bias"])
        attn = self._attend(
            ops.slice_axis(qkv, 0, d), ops.slice_axis(qkv, d, 2 * d), ops.slice_axis(qkv, 2 * d, 3 * d)
        )
        attn = ops.linear(attn, params[f"{pre}.attn.proj.weight"], params[f"{pre}.attn.proj.bias"])
        x = ops.add(x, ops.mul(g1, attn))

        h = self._modulate(x, sh2, sc2)
        q = ops.linear(h, params[f"{pre}.cross.q.weight"], params[f"{pre}.cross.q.bias"])
        kv = ops.linear(ctx, params[f"{pre}.cross.kv.weight"], params[f"{pre}.cross.kv.bias"])
        cross = self._attend(q, ops.slice_axis(kv, 0, d), ops.slice_axis(kv, d, 2 * d))
        cross = ops.linear(cross, params[f"{pre}.cross.proj.weight"], params[f"{pre}.cross.proj.bias"])
        x = ops.add(x, ops.mul(g2, cross))

        h = self._modulate(x, sh3, sc3)
        h = ops.gelu(ops.linear(h, params[f"{pre}.mlp.fc1.weight"], params[f"{pre}.mlp.fc1.bias"]))
        h = ops.linear(h, params[f"{pre}.mlp.fc2.weight"], params[f"{pre}.mlp.fc2.bias"])
        return ops.add(x, ops.mul(g3, h))

    def _check_inputs(self, z: Tensor, t, r, modes) -> Tuple[int, int, int]:
        cfg = self.config
        if z.ndim != 4:
            raise ContractViolationException(f"latent batch must be B x h x w x c, got {z.shape}")
        b, h, w, c = z.shape
        if c != cfg.latent_channels:
            raise ContractViolationException(
                f"latent channels {c} do not match model config {cfg.latent_channels}"
            )
        if h % cfg.patch != 0 or w % cfg.patch != 0:
            raise ContractViolationException(
                f"latent grid {h}x{w} is not divisible by patch {cfg.patch}"
            )
        tokens = (h // cfg.patch) * (w // cfg.patch)
        if tokens > cfg.max_tokens:
            raise ContractViolationException(
                f"{tokens} tokens exceed max_tokens {cfg.max_tokens}"
            )
        if not (len(t) == len(r) == len(modes) == b):
            raise ContractViolationException(
                f"batch of {b} latents needs {b} times and modes, got {len(t)}/{len(r)}/{len(modes)}"
            )
        for mode in modes:
            if np.shape(mode.c_str) != (h, w, c):
                raise ContractViolationException(
                    f"structural condition {np.shape(mode.c_str)} does not match latent {(h, w, c)}"
                )
        return b, h, w

    # -- forward --------------------------------------------------------

    def forward_batch(
        self,
        z_t: ArrayLike,
        t: Sequence[float],
        r: Sequence[float],
        modes: Sequence[CondMode],
        params: Optional[ModelParams] = None,
    ) -> Tensor:
        params = self.params if params is None else params
        dtype = params["patch_embed.weight"].dtype
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        r = np.atleast_1d(np.asarray(r, dtype=np.float64))
        z = z_t if isinstance(z_t, Tensor) else Tensor(np.asarray(z_t), dtype=dtype)
        b, h, w = self._check_inputs(z, t, r, modes)
        p = self.config.patch

        c_str = Tensor(np.stack([np.asarray(m.c_str) for m in modes]), dtype=dtype)
        tokens = self._patchify(ops.concat([z, c_str], axis=-1))
        pos = Tensor(positional_embedding(h // p, w // p, self.config.dim), dtype=dtype)
        x = ops.add(
            ops.linear(tokens, params["patch_embed.weight"], params["patch_embed.bias"]), pos
        )

        cond = self.timestep_embedding(params, t, "t_embed")
        if self.config.student_mode:
            cond = ops.add(cond, self.timestep_embedding(params, r, "r_embed"))
        cond = ops.silu(cond)
        ctx = self._semantic_context(params, modes, dtype)

        for index in range(self.config.depth):
            x = self._block(params, index, x, cond, ctx)

        shift, scale = self._chunks(
            ops.linear(cond, params["final.mod.weight"], params["final.mod.bias"]), 2
        )
        out = ops.linear(
            self._modulate(x, shift, scale), params["final.head.weight"], params["final.head.bias"]
        )
        return self._unpatchify(out, h, w)


class BackboneService:
    @staticmethod
    def create(config: ModelConfig, seed: int = 0) -> DiffusionTransformer:
        return DiffusionTransformer(config, init_params(config, seed))

    @staticmethod
    def forward(
        params: ModelParams,
        z_t: np.ndarray,
        t: float,
        r: float,
        mode: CondMode,
        config: ModelConfig,
    ) -> np.ndarray:
        return DiffusionTransformer(config, params).forward(z_t, t, r, mode)
