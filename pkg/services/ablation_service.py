"""Paired ablation sweeps over guidance and conditioning choices on shared seeds."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from models.enums import AblationAxis, AuxBranch, CheckpointKind, GuidanceStyle
from models.image import Image
from models.recipes import SampleConfig
from numerics.random import derive_seed
from services.analytics.engine import EvaluationEngine, format_value
from services.backbone.checkpoint import Checkpoint
from services.conditioning_service import ConditionEncoders
from services.sampling_service import SamplingService
from utils.data_handling.excel_exporter import ExcelExporter
from utils.decorators import contract_operation, io_operation, measure_performance
from utils.exceptions import ContractViolationException, FileOperationException
from utils.system.logger import logger

SWEEP_COLUMNS = ["setting", "psnr_y", "ssim_y"]
STYLE_SWEEP = (GuidanceStyle.RESTORATION, GuidanceStyle.T2I_BASELINE, GuidanceStyle.NONE)


@dataclass
class AblationReport:
    axis: AblationAxis
    rows: List[Dict[str, object]] = field(default_factory=list)

    def to_table(self, delimiter: str = "\t") -> str:
        lines = [delimiter.join(SWEEP_COLUMNS)]
        for row in self.rows:
            lines.append(
                delimiter.join(
                    [str(row["setting"]), format_value(float(row["psnr_y"])), format_value(float(row["ssim_y"]))]
                )
            )
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class _Arm:
    """One sweep row: which checkpoint samples under which guidance."""

    setting: str
    checkpoint: Checkpoint
    cfg: SampleConfig


def _aux_branch_of(ckpt: Checkpoint) -> AuxBranch:
    recipe = ckpt.metadata.get("recipe", {})
    return AuxBranch(recipe.get("aux_branch", AuxBranch.PARTIAL.value))


def _with_guidance(cfg: SampleConfig, **update) -> SampleConfig:
    return cfg.model_copy(update={"guidance": cfg.guidance.model_copy(update=update)})


class AblationService:
    @staticmethod
    def restore_all(
        ckpt: Checkpoint, lows: Sequence[Image], cfg: SampleConfig, workers: int = 4
    ) -> List[Image]:
        """Sample every LR image with a per-image seed shared by all sweep arms."""
        if CheckpointKind(ckpt.kind) is not CheckpointKind.TEACHER:
            raise ContractViolationException("ablation sweeps sample teacher checkpoints")
        encoders = ConditionEncoders.from_header(ckpt.metadata["conditioning"])
        teacher = ckpt.model()

        def run(index: int) -> Image:
            seeded = cfg.model_copy(update={"seed": derive_seed(cfg.seed, "ablate-image", index)})
            return SamplingService.super_resolve(teacher, lows[index], seeded, encoders)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, range(len(lows))))

    @staticmethod
    def _arms(
        axis: AblationAxis,
        checkpoints: Sequence[Checkpoint],
        cfg: SampleConfig,
        scales: Sequence[float],
    ) -> List[_Arm]:
        if axis is AblationAxis.GUIDANCE_SCALE:
            ckpt = checkpoints[0]
            return [_Arm(f"scale={s!r}", ckpt, _with_guidance(cfg, scale=float(s))) for s in scales]

        if axis is AblationAxis.GUIDANCE_STYLE:
            ckpt = checkpoints[0]
            return [_Arm(style.value, ckpt, _with_guidance(cfg, style=style)) for style in STYLE_SWEEP]

        if len(checkpoints) != 2:
            raise ContractViolationException(
                f"axis {axis.value} needs exactly two checkpoints, got {len(checkpoints)}"
            )
        if axis is AblationAxis.SEMANTIC_ON_OFF:
            flags = [c.config.semantic_enabled for c in checkpoints]
            if flags[0] == flags[1]:
                raise ContractViolationException(
                    "semantic_on_off needs one checkpoint trained with and one without semantics"
                )
            with_sem, without_sem = checkpoints if flags[0] else checkpoints[::-1]
            return [_Arm("with_semantics", with_sem, cfg), _Arm("without_semantics", without_sem, cfg)]

        branches = [_aux_branch_of(c) for c in checkpoints]
        if set(branches) != {AuxBranch.PARTIAL, AuxBranch.UNCONDITIONAL}:
            raise ContractViolationException(
                "aux_branch needs one checkpoint trained with the partial and one with the "
                "unconditional auxiliary branch"
            )
        partial, uncond = checkpoints if branches[0] is AuxBranch.PARTIAL else checkpoints[::-1]
        return [
            _Arm("restoration", partial, _with_guidance(cfg, style=GuidanceStyle.RESTORATION)),
            _Arm("standard_cfg", uncond, _with_guidance(cfg, style=GuidanceStyle.STANDARD_CFG)),
        ]

    @staticmethod
    @contract_operation()
    @measure_performance(threshold=600.0)
    def ablation_sweep(
        axis: Union[AblationAxis, str],
        checkpoints: Sequence[Checkpoint],
        pairs: Sequence[Tuple[str, Image, Image]],
        cfg: SampleConfig,
        scales: Sequence[float] = (0.0, 0.5, 1.0, 1.5),
        workers: int = 4,
    ) -> AblationReport:
        """One table row per arm; ``pairs`` are ``(name, lr, hr)`` triples."""
        axis = AblationAxis(axis)
        if not checkpoints:
            raise ContractViolationException("ablation sweep needs a trained checkpoint")
        if not pairs:
            raise ContractViolationException("ablation sweep needs at least one LR/HR pair")
        lows = [lr for _, lr, _ in pairs]
        engine = EvaluationEngine(workers=workers)
        report = AblationReport(axis)
        for arm in AblationService._arms(axis, checkpoints, cfg, scales):
            outputs = AblationService.restore_all(arm.checkpoint, lows, arm.cfg, workers)
            metrics = engine.evaluate_pairs(
                [(name, out, hr) for (name, _, hr), out in zip(pairs, outputs)]
            )
            report.rows.append({"setting": arm.setting, **metrics.means})
            logger.info("Ablation arm finished", extra={"axis": axis.value, "setting": arm.setting, **metrics.means})
        return report

    @staticmethod
    @io_operation()
    def write_report(
        report: AblationReport,
        path: Union[str, Path],
        delimiter: str = "\t",
        xlsx_path: Optional[Union[str, Path]] = None,
    ) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(report.to_table(delimiter), encoding="utf-8")
        except OSError as e:
            raise FileOperationException(f"cannot write ablation table {path}: {e}")
        if xlsx_path is not None:
            ExcelExporter.export_table(report.rows, SWEEP_COLUMNS, xlsx_path, sheet_name=report.axis.value)
        return path
