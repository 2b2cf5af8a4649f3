"""Command-line entry point: ``python main.py <subcommand> [flags]``."""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from config import APP_NAME, APP_TITLE, APP_VERSION, RunConfig
from models.enums import AblationAxis, CheckpointKind, DistillVariant, GuidanceStyle
from models.image import Image
from models.recipes import DegradeParams
from numerics.random import derive_seed
from services.ablation_service import AblationService
from services.alignment_service import AlignmentService
from services.analytics.engine import EvaluationEngine
from services.backbone.checkpoint import CheckpointService
from services.conditioning_service import ConditionEncoders, LatentCodec, SemanticEncoder
from services.degradation_service import DegradationService
from services.distillation_service import STUDENT_CHECKPOINT_NAME, DistillationService
from services.image_service import ImageService
from services.sampling_service import SamplingService
from services.training_service import TrainingService
from utils.data_handling.excel_exporter import ExcelExporter
from utils.exceptions import (
    EXIT_INTERNAL,
    AppException,
    ContractViolationException,
    FileOperationException,
)
from utils.system.logger import LoggerConfig, close_log_file, log_method, logger, setup_logger

EXIT_OK = 0

# flag dest -> config key, per subcommand; explicit flags win over --config and --set
FLAG_KEYS: Dict[str, Dict[str, str]] = {
    "gen-data": {"count": "data.count", "size": "data.size", "seed": "data.seed", "kind": "data.kinds"},
    "degrade": {"seed": "degrade.seed", "scale": "degrade.scale"},
    "train": {"steps": "train.steps", "seed": "train.seed", "batch": "train.batch", "lr_rate": "train.lr"},
    "distill": {
        "steps": "distill.steps",
        "seed": "distill.seed",
        "variant": "distill.variant",
        "omega": "distill.omega",
    },
    "sample": {
        "guidance_scale": "sample.guidance_scale",
        "style": "sample.style",
        "seed": "sample.seed",
    },
    "eval": {"workers": "eval.workers"},
    "align": {"levels": "align.levels"},
    "ablate": {"axis": "ablate.axis", "seed": "sample.seed"},
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat key = value config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    parser.add_argument("--log-file", type=Path, help="also write JSON log records to this file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=APP_NAME, description=APP_TITLE)
    parser.add_argument("--version", action="version", version=f"%(prog)s {APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("gen-data", help="write a procedural HR corpus")
    _add_common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--kind")

    p = sub.add_parser("degrade", help="synthesize LR partners for an HR directory")
    _add_common(p)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--scale", type=int)

    p = sub.add_parser("train", help="flow-matching teacher training")
    _add_common(p)
    p.add_argument("--hr", type=Path, help="HR directory (procedural corpus when omitted)")
    p.add_argument("--lr", type=Path, help="LR directory paired by file name")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--learning-rate", dest="lr_rate", type=float)

    p = sub.add_parser("distill", help="distill a teacher checkpoint into a one-step student")
    _add_common(p)
    p.add_argument("--teacher", type=Path, required=True)
    p.add_argument("--hr", type=Path)
    p.add_argument("--lr", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--variant", choices=[v.value for v in DistillVariant])
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--omega", type=float)

    p = sub.add_parser("sample", help="super-resolve a directory of LR images")
    _add_common(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--guidance-scale", type=float)
    p.add_argument("--style", choices=[s.value for s in GuidanceStyle])
    p.add_argument("--seed", type=int)

    p = sub.add_parser("eval", help="PSNR-Y / SSIM-Y table of outputs against references")
    _add_common(p)
    p.add_argument("--out", type=Path, required=True, help="directory of outputs to score")
    p.add_argument("--ref", type=Path, required=True)
    p.add_argument("--table", type=Path, help="also write the table to this file")
    p.add_argument("--xlsx", type=Path)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("align", help="align a re-photographed capture to its source")
    _add_common(p)
    p.add_argument("--source", type=Path, required=True)
    p.add_argument("--photo", type=Path, required=True)
    p.add_argument("--corners", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--levels", type=int)

    p = sub.add_parser("ablate", help="paired ablation sweep")
    _add_common(p)
    p.add_argument("--ckpt", type=Path, action="append", required=True)
    p.add_argument("--lr", type=Path, required=True)
    p.add_argument("--hr", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="table path")
    p.add_argument("--axis", choices=[a.value for a in AblationAxis])
    p.add_argument("--seed", type=int)
    p.add_argument("--xlsx", type=Path)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Schema defaults <- --config file <- --set pairs <- explicit flags."""
    config = RunConfig.load(args.config) if args.config else RunConfig()
    pairs: Dict[str, Any] = {}
    for item in args.overrides:
        if "=" not in item:
            raise ContractViolationException(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        pairs[key] = value
    config = config.merged(pairs)
    flags = {key: getattr(args, dest, None) for dest, key in FLAG_KEYS[args.command].items()}
    return config.merged(flags)


def encoders_from_config(config: RunConfig) -> ConditionEncoders:
    channels = config["data.channels"]
    codec = LatentCodec(fold=config["codec.fold"], channels=channels)
    semantic = SemanticEncoder(
        patch=config["semantic.patch"],
        dim=config["semantic.dim"],
        seed=config["semantic.seed"],
        channels=channels,
    )
    return ConditionEncoders(codec, semantic, config["degrade.scale"])


def _paired_lows(hr_names: Sequence[str], lr_dir: Optional[Path]) -> Optional[List[Image]]:
    if lr_dir is None:
        return None
    lows = dict(ImageService.load_directory(lr_dir))
    missing = [n for n in hr_names if n not in lows]
    if missing:
        raise FileOperationException(f"no LR image for {missing[0]} in {lr_dir}")
    return [lows[n] for n in hr_names]


def _corpus(config: RunConfig, hr_dir: Optional[Path]) -> List[tuple]:
    if hr_dir is not None:
        return ImageService.load_directory(hr_dir)
    images = ImageService.generate_corpus(
        config["data.seed"],
        config["data.count"],
        config["data.size"],
        config.procedural_kinds(),
        config["data.channels"],
    )
    return [(f"hr_{i:04d}.ppm", img) for i, img in enumerate(images)]


# -- subcommands ---------------------------------------------------------


@log_method()
def cmd_gen_data(args: argparse.Namespace, config: RunConfig) -> int:
    named = _corpus(config, None)
    ImageService.save_corpus([img for _, img in named], args.out, names=[n for n, _ in named])
    config.write_resolved(args.out)
    return EXIT_OK


@log_method()
def cmd_degrade(args: argparse.Namespace, config: RunConfig) -> int:
    named = ImageService.load_directory(args.input)
    lows = DegradationService.degrade_batch(
        [img for _, img in named], config.degrade_params(), config["degrade.seed"]
    )
    ImageService.save_corpus(lows, args.out, names=[n for n, _ in named])
    config.write_resolved(args.out)
    return EXIT_OK


@log_method()
def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    named = _corpus(config, args.hr)
    hr = [img for _, img in named]
    result = TrainingService.train(
        hr,
        config.train_recipe(),
        config.model_config(),
        encoders_from_config(config),
        config.degrade_params(),
        output_dir=args.out,
        lr_images=_paired_lows([n for n, _ in named], args.lr),
    )
    config.write_resolved(args.out)
    print(f"final loss {result.losses[-1]:.9g}")
    return EXIT_OK


@log_method()
def cmd_distill(args: argparse.Namespace, config: RunConfig) -> int:
    teacher = CheckpointService.load(args.teacher)
    encoders = ConditionEncoders.from_header(teacher.metadata["conditioning"])
    degrade = (
        DegradeParams(**teacher.metadata["degrade"])
        if "degrade" in teacher.metadata
        else config.degrade_params()
    )
    named = _corpus(config, args.hr)
    result = DistillationService.distill(
        teacher,
        [img for _, img in named],
        config.distill_config(),
        encoders,
        degrade,
        output_dir=args.out,
        lr_images=_paired_lows([n for n, _ in named], args.lr),
    )
    config.write_resolved(args.out)
    print(f"{args.out / STUDENT_CHECKPOINT_NAME}: final loss {result.losses[-1]:.9g}")
    return EXIT_OK


@log_method()
def cmd_sample(args: argparse.Namespace, config: RunConfig) -> int:
    ckpt = CheckpointService.load(args.ckpt)
    encoders = ConditionEncoders.from_header(ckpt.metadata["conditioning"])
    model = ckpt.model()
    named = ImageService.load_directory(args.input)
    if CheckpointKind(ckpt.kind) is CheckpointKind.TEACHER:
        if args.steps is not None:
            config = config.merged({"sample.steps": args.steps})
        cfg = config.sample_config()
        outputs = []
        for i, (_, lr) in enumerate(named):
            seeded = cfg.model_copy(update={"seed": derive_seed(cfg.seed, "image", i)})
            outputs.append(SamplingService.super_resolve(model, lr, seeded, encoders))
    else:
        if args.steps is not None:
            config = config.merged({"sample.student_steps": args.steps})
        cfg = config.sample_config()
        outputs = []
        for i, (_, lr) in enumerate(named):
            seed = derive_seed(cfg.seed, "image", i)
            if cfg.student_steps == 1:
                out = DistillationService.one_step_super_resolve(model, lr, seed, encoders, cfg.use_ema)
            else:
                out = DistillationService.few_step_super_resolve(
                    model, lr, cfg.student_steps, seed, encoders, cfg.use_ema
                )
            outputs.append(out)
    ImageService.save_corpus(outputs, args.out, names=[n for n, _ in named])
    config.write_resolved(args.out)
    return EXIT_OK


@log_method()
def cmd_eval(args: argparse.Namespace, config: RunConfig) -> int:
    engine = EvaluationEngine(workers=config["eval.workers"])
    report = engine.evaluate_directories(args.out, args.ref)
    table = EvaluationEngine.format_table(report, config.table_delimiter())
    sys.stdout.write(table)
    if args.table is not None:
        try:
            args.table.parent.mkdir(parents=True, exist_ok=True)
            args.table.write_text(table, encoding="utf-8")
        except OSError as e:
            raise FileOperationException(f"cannot write table {args.table}: {e}")
        config.write_resolved(args.table.parent)
    if args.xlsx is not None:
        ExcelExporter.export_table(report.data, ["name", *report.columns], args.xlsx, sheet_name="eval")
    return EXIT_OK


@log_method()
def cmd_align(args: argparse.Namespace, config: RunConfig) -> int:
    source = ImageService.read_image(args.source)
    photo = ImageService.read_image(args.photo)
    pts = AlignmentService.read_correspondences(args.corners)
    aligned, report = AlignmentService.align_pair(
        source, photo, pts, config["align.levels"], config.align_target_size()
    )
    ImageService.write_image(aligned, args.out)
    report_path = args.out.with_suffix(".json")
    try:
        report_path.write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True), encoding="utf-8")
    except OSError as e:
        raise FileOperationException(f"cannot write alignment report {report_path}: {e}")
    config.write_resolved(args.out.parent)
    print(f"psnr_y {report.psnr_y:.4f} dB, reprojection error {report.mean_reprojection_error:.3g} px")
    return EXIT_OK


@log_method()
def cmd_ablate(args: argparse.Namespace, config: RunConfig) -> int:
    checkpoints = [CheckpointService.load(p) for p in args.ckpt]
    references = ImageService.load_directory(args.hr)
    lows = _paired_lows([n for n, _ in references], args.lr)
    pairs = [(name, lr, hr) for (name, hr), lr in zip(references, lows)]
    report = AblationService.ablation_sweep(
        config["ablate.axis"],
        checkpoints,
        pairs,
        config.sample_config(),
        config.ablation_scales(),
        workers=config["eval.workers"],
    )
    AblationService.write_report(report, args.out, config.table_delimiter(), args.xlsx)
    config.write_resolved(args.out.parent)
    sys.stdout.write(report.to_table(config.table_delimiter()))
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], int]] = {
    "gen-data": cmd_gen_data,
    "degrade": cmd_degrade,
    "train": cmd_train,
    "distill": cmd_distill,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "align": cmd_align,
    "ablate": cmd_ablate,
}


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and map failures to exit codes (1 contract or internal, 2 I/O or usage)."""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as e:
        return int(e.code or 0)

    run_log = logger.with_context(subcommand=args.command)
    try:
        if args.log_file is not None:
            setup_logger(LoggerConfig(log_file=args.log_file))
        config = resolve_config(args)
        code = COMMANDS[args.command](args, config)
    except AppException as e:
        code = e.exit_code
        run_log.error("Subcommand failed", extra={"error": str(e), "exit_code": code, **e.details})
        print(f"error: {e.message}", file=sys.stderr)
        return code
    except Exception as e:
        run_log.exception(
            "Subcommand crashed",
            extra={"error_type": type(e).__name__, "error": str(e), "exit_code": EXIT_INTERNAL},
        )
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    else:
        run_log.info("Subcommand finished", extra={"exit_code": code})
        return code
    finally:
        if args.log_file is not None:
            close_log_file(args.log_file)


if __name__ == "__main__":
    sys.exit(dispatch())
