import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Union

from pydantic import ValidationError

from models.enums import (
    AblationAxis,
    AuxBranch,
    DistillVariant,
    GuidanceStyle,
    ProceduralKind,
    RcCoefficients,
)
from models.recipes import (
    DegradeParams,
    DistillConfig,
    GuidanceConfig,
    ModelConfig,
    SampleConfig,
    TrainRecipe,
)
from utils.exceptions import (
    ConfigurationException,
    DataFormatException,
    FileOperationException,
    ValidationException,
)
from utils.validation.validators import (
    validate_boolean,
    validate_choice,
    validate_float,
    validate_integer,
    validate_list,
    validate_range_pair,
    validate_seed,
)

# Application settings
APP_NAME: str = "vosr"
APP_TITLE: str = "VOSR desk-scale super-resolution"
APP_VERSION: str = "1.0"
CONFIG_VERSION: str = "1"
RESOLVED_CONFIG_NAME: str = "resolved_config.txt"


DEBUG_LEVEL = logging.INFO


@dataclass(frozen=True)
class ConfigField:
    """Schema entry: value kind, default, and the admissible bounds or choices."""

    kind: str
    default: Any
    bounds: Optional[Tuple[Optional[float], Optional[float]]] = None
    choices: Optional[Tuple[str, ...]] = None


def _choices(enum_cls) -> Tuple[str, ...]:
    return tuple(member.value for member in enum_cls)


_UNBOUNDED = (None, None)

CONFIG_SCHEMA: Dict[str, ConfigField] = {
    # procedural corpus
    "data.count": ConfigField("int", 8, (1, None)),
    "data.size": ConfigField("int", 64, (16, None)),
    "data.kinds": ConfigField("str_list", ("mixed",), choices=_choices(ProceduralKind)),
    "data.channels": ConfigField("int", 3, (1, 3)),
    "data.seed": ConfigField("seed", 0),
    # degradation chain
    "degrade.blur_sigma": ConfigField("float_pair", (0.1, 1.2), (0.0, None)),
    "degrade.noise_sigma": ConfigField("float_pair", (0.0, 0.05), (0.0, None)),
    "degrade.jpeg_quality": ConfigField("int_pair", (30, 95), (1, 100)),
    "degrade.scale": ConfigField("int", 4, (2, None)),
    "degrade.second_stage": ConfigField("bool", False),
    "degrade.seed": ConfigField("seed", 0),
    # conditioning
    "codec.fold": ConfigField("int", 4, (1, None)),
    "semantic.patch": ConfigField("int", 4, (1, None)),
    "semantic.dim": ConfigField("int", 64, (2, None)),
    "semantic.seed": ConfigField("seed", 0),
    # backbone
    "model.dim": ConfigField("int", 128, (4, None)),
    "model.depth": ConfigField("int", 4, (1, None)),
    "model.heads": ConfigField("int", 4, (1, None)),
    "model.patch": ConfigField("int", 2, (1, None)),
    "model.mlp_ratio": ConfigField("int", 4, (1, None)),
    "model.freq_dim": ConfigField("int", 64, (2, None)),
    "model.max_tokens": ConfigField("int", 1024, (1, None)),
    "model.semantic_enabled": ConfigField("bool", True),
    # flow-matching training
    "train.lr": ConfigField("float", 1.0e-4, (0.0, None)),
    "train.beta1": ConfigField("float", 0.9, (0.0, 1.0)),
    "train.beta2": ConfigField("float", 0.95, (0.0, 1.0)),
    "train.weight_decay": ConfigField("float", 0.01, (0.0, None)),
    "train.grad_clip": ConfigField("float", 1.0, (0.0, None)),
    "train.ema_decay": ConfigField("float", 0.9999, (0.0, 1.0)),
    "train.lr_schedule": ConfigField("choice", "constant", choices=("constant",)),
    "train.warmup_steps": ConfigField("int", 0, (0, 0)),
    "train.steps": ConfigField("int", 2000, (1, None)),
    "train.batch": ConfigField("int", 8, (1, None)),
    "train.seed": ConfigField("seed", 0),
    "train.p_partial": ConfigField("float", 0.1, (0.0, 1.0)),
    "train.alpha_range": ConfigField("float_pair", (0.05, 0.25), (0.0, 1.0)),
    "train.aux_branch": ConfigField("choice", "partial", choices=_choices(AuxBranch)),
    "train.checkpoint_every": ConfigField("int", 500, (1, None)),
    "train.progressive_steps": ConfigField("int", 0, (0, None)),
    "train.progressive_lr_scale": ConfigField("float", 0.5, (0.0, None)),
    "train.online_degradation": ConfigField("bool", False),
    "train.workers": ConfigField("int", 4, (1, 64)),
    # sampling
    "sample.steps": ConfigField("int", 25, (1, None)),
    "sample.guidance_scale": ConfigField("float", 1.0, (0.0, None)),
    "sample.alpha_infer": ConfigField("float", 0.15, (0.0, 1.0)),
    "sample.style": ConfigField("choice", "restoration", choices=_choices(GuidanceStyle)),
    "sample.seed": ConfigField("seed", 0),
    "sample.use_ema": ConfigField("bool", True),
    "sample.student_steps": ConfigField("int", 1, (1, None)),
    # one-step distillation
    "distill.lr": ConfigField("float", 2.0e-5, (0.0, None)),
    "distill.ema_decay": ConfigField("float", 0.9999, (0.0, 1.0)),
    "distill.omega": ConfigField("float", 1.5, (0.0, None)),
    "distill.variant": ConfigField("choice", "rc", choices=_choices(DistillVariant)),
    "distill.delta_t": ConfigField("float", 0.25, (0.0, None)),
    "distill.rollout_steps": ConfigField("int", 4, (1, None)),
    "distill.c_l": ConfigField("float", 1.0, _UNBOUNDED),
    "distill.c_r": ConfigField("float", 1.0, _UNBOUNDED),
    "distill.rc_coefficients": ConfigField(
        "choice", "time_weighted", choices=_choices(RcCoefficients)
    ),
    "distill.clip": ConfigField("float", 1.0, (0.0, None)),
    "distill.aux_weight": ConfigField("float", 1.0, (0.0, None)),
    "distill.p_r_equals_t": ConfigField("float", 0.25, (0.0, 1.0)),
    "distill.steps": ConfigField("int", 1000, (1, None)),
    "distill.batch": ConfigField("int", 8, (1, None)),
    "distill.seed": ConfigField("seed", 0),
    "distill.checkpoint_every": ConfigField("int", 500, (1, None)),
    "distill.teacher_use_ema": ConfigField("bool", True),
    # benchmark alignment
    "align.levels": ConfigField("int", 3, (1, 16)),
    "align.target_height": ConfigField("int", 0, (0, None)),
    "align.target_width": ConfigField("int", 0, (0, None)),
    # evaluation
    "eval.workers": ConfigField("int", 4, (1, 64)),
    "eval.delimiter": ConfigField("choice", "tab", choices=("tab", "comma")),
    # ablations
    "ablate.axis": ConfigField("choice", "guidance_scale", choices=_choices(AblationAxis)),
    "ablate.scales": ConfigField("float_list", (0.0, 0.5, 1.0, 1.5), (0.0, None)),
}


def _format_scalar(kind: str, value: Any) -> str:
    if kind in ("float", "float_pair", "float_list"):
        return repr(float(value))
    if kind == "bool":
        return "true" if value else "false"
    return str(value)


def _coerce(key: str, field: ConfigField, raw: Any) -> Any:
    lo, hi = field.bounds if field.bounds else (None, None)
    kind = field.kind
    if kind in ("float_pair", "int_pair", "float_list", "str_list") and isinstance(raw, str):
        raw = [part.strip() for part in raw.split(",") if part.strip()]

    if kind == "int":
        return validate_integer(raw, lo, hi, field_name=key)
    if kind == "seed":
        return validate_seed(raw, field_name=key)
    if kind == "float":
        return validate_float(raw, lo, hi, field_name=key)
    if kind == "bool":
        return validate_boolean(raw, field_name=key)
    if kind == "choice":
        return validate_choice(raw, field.choices, field_name=key)
    if kind == "float_pair":
        return validate_range_pair(raw, lambda v: validate_float(v, lo, hi, key), key)
    if kind == "int_pair":
        return validate_range_pair(raw, lambda v: validate_integer(v, lo, hi, key), key)
    if kind == "float_list":
        return tuple(validate_list(raw, lambda v: validate_float(v, lo, hi, key), min_length=1, field_name=key))
    if kind == "str_list":
        return tuple(
            validate_list(raw, lambda v: validate_choice(v, field.choices, key), min_length=1, field_name=key)
        )
    raise ConfigurationException(f"unsupported schema kind {kind!r} for {key}")


class RunConfig:
    """Flat, schema-validated ``key = value`` run configuration.

    Values merge as schema defaults <- config file <- explicit overrides.
    :meth:`serialize` is canonical (sorted keys, ``repr`` floats), so parsing
    the serialized text reproduces the same configuration.
    """

    def __init__(self, values: Optional[Mapping[str, Any]] = None):
        self._values: Dict[str, Any] = {k: f.default for k, f in CONFIG_SCHEMA.items()}
        for key, raw in (values or {}).items():
            self._values[key] = self._validate_entry(key, raw)
        self._validate_config()

    @staticmethod
    def _validate_entry(key: str, raw: Any) -> Any:
        field = CONFIG_SCHEMA.get(key)
        if field is None:
            raise ConfigurationException(
                f"unknown config key: {key}", details={"key": key}
            )
        try:
            return _coerce(key, field, raw)
        except ValidationException as e:
            raise ConfigurationException(
                f"invalid value for {key}: {e.message}", details={"key": key}
            ) from e

    def _validate_config(self) -> None:
        """Cross-field checks, delegated to the typed records."""
        try:
            self.model_config()
            self.degrade_params()
            self.train_recipe()
            self.sample_config()
            self.distill_config()
        except ValidationError as e:
            first = e.errors()[0]
            raise ConfigurationException(
                f"invalid configuration: {first.get('msg')}",
                details={"errors": [err.get("msg") for err in e.errors()]},
            ) from e
        size, fold = self["data.size"], self["codec.fold"]
        scale = self["degrade.scale"]
        if size % (fold * self["model.patch"]) != 0:
            raise ConfigurationException(
                f"data.size {size} must be divisible by codec.fold x model.patch"
            )
        if size % scale != 0 or (size // scale) % self["semantic.patch"] != 0:
            raise ConfigurationException(
                f"data.size {size} must give an LR size divisible by semantic.patch"
            )

    # -- access ---------------------------------------------------------

    def __getitem__(self, key: str) -> Any:
        if key not in self._values:
            raise ConfigurationException(f"unknown config key: {key}", details={"key": key})
        return self._values[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self._values.get(key, default)

    def as_dict(self) -> Dict[str, Any]:
        return dict(self._values)

    def section(self, prefix: str) -> Dict[str, Any]:
        head = prefix.rstrip(".") + "."
        return {k[len(head):]: v for k, v in self._values.items() if k.startswith(head)}

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RunConfig) and self._values == other._values

    def merged(self, overrides: Mapping[str, Any]) -> "RunConfig":
        values = dict(self._values)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig(values)

    # -- text form ------------------------------------------------------

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        values: Dict[str, Any] = {}
        offset = 0
        for line_no, line in enumerate(text.splitlines(keepends=True), start=1):
            line_offset = offset
            offset += len(line.encode("utf-8"))
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise DataFormatException(
                    f"{source}:{line_no}: expected 'key = value'",
                    details={"offset": line_offset, "line": line_no},
                )
            key, raw = (part.strip() for part in body.split("=", 1))
            if key in values:
                raise ConfigurationException(
                    f"duplicate config key: {key}", details={"key": key, "line": line_no}
                )
            values[key] = cls._validate_entry(key, raw)
        return cls(values)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise FileOperationException(f"cannot read config {path}: {e}")
        return cls.from_text(text, source=str(path))

    def serialize(self) -> str:
        lines = [f"# {APP_NAME} run configuration v{CONFIG_VERSION}"]
        for key in sorted(self._values):
            field, value = CONFIG_SCHEMA[key], self._values[key]
            if isinstance(value, (tuple, list)):
                text = ", ".join(_format_scalar(field.kind, v) for v in value)
            else:
                text = _format_scalar(field.kind, value)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    def save(self, path: Union[str, Path]) -> Path:
        target = Path(path)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(self.serialize(), encoding="utf-8")
        except OSError as e:
            raise FileOperationException(f"cannot write config {target}: {e}")
        return target

    def write_resolved(self, directory: Union[str, Path]) -> Path:
        return self.save(Path(directory) / RESOLVED_CONFIG_NAME)

    # -- typed records --------------------------------------------------

    def latent_channels(self) -> int:
        return self["data.channels"] * self["codec.fold"] ** 2

    def model_config(self, student: bool = False) -> ModelConfig:
        return ModelConfig(
            dim=self["model.dim"],
            depth=self["model.depth"],
            heads=self["model.heads"],
            patch=self["model.patch"],
            mlp_ratio=self["model.mlp_ratio"],
            d_sem=self["semantic.dim"],
            latent_channels=self.latent_channels(),
            freq_dim=self["model.freq_dim"],
            max_tokens=self["model.max_tokens"],
            student_mode=student,
            semantic_enabled=self["model.semantic_enabled"],
        )

    def degrade_params(self) -> DegradeParams:
        return DegradeParams(
            blur_sigma=self["degrade.blur_sigma"],
            noise_sigma=self["degrade.noise_sigma"],
            jpeg_quality=self["degrade.jpeg_quality"],
            scale=self["degrade.scale"],
            second_stage=self["degrade.second_stage"],
        )

    def train_recipe(self) -> TrainRecipe:
        return TrainRecipe(**self.section("train"))

    def guidance_config(self) -> GuidanceConfig:
        return GuidanceConfig(
            scale=self["sample.guidance_scale"],
            alpha_infer=self["sample.alpha_infer"],
            style=self["sample.style"],
        )

    def sample_config(self) -> SampleConfig:
        return SampleConfig(
            steps=self["sample.steps"],
            guidance=self.guidance_config(),
            seed=self["sample.seed"],
            use_ema=self["sample.use_ema"],
            student_steps=self["sample.student_steps"],
        )

    def distill_config(self) -> DistillConfig:
        optimizer = {
            k: self[f"train.{k}"]
            for k in ("beta1", "beta2", "weight_decay", "grad_clip", "lr_schedule", "warmup_steps")
        }
        return DistillConfig(
            **optimizer,
            **self.section("distill"),
            alpha_infer=self["sample.alpha_infer"],
            p_partial=self["train.p_partial"],
            alpha_range=self["train.alpha_range"],
        )

    def align_target_size(self) -> Optional[Tuple[int, int]]:
        """(height, width) to resample aligned images to; None keeps the source size."""
        h, w = self["align.target_height"], self["align.target_width"]
        if h == 0 and w == 0:
            return None
        if h == 0 or w == 0:
            raise ConfigurationException(
                "align.target_height and align.target_width must be set together"
            )
        return h, w

    def table_delimiter(self) -> str:
        return "\t" if self["eval.delimiter"] == "tab" else ","

    def ablation_scales(self) -> List[float]:
        return list(self["ablate.scales"])

    def procedural_kinds(self) -> Iterable[ProceduralKind]:
        return [ProceduralKind(k) for k in self["data.kinds"]]
