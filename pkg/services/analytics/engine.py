import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from models.image import Image
from services.analytics.contracts import Metric, MetricReport
from services.analytics.metrics import DEFAULT_METRICS
from services.image_service import ImageService
from utils.decorators import contract_operation, io_operation
from utils.exceptions import ContractViolationException, FileOperationException
from utils.system.logger import logger

NamedPair = Tuple[str, Image, Image]
MEAN_ROW_NAME = "mean"


def format_value(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.6f}"


class EvaluationEngine:
    """Runs full-reference metrics over image pairs, one pair per worker task."""

    def __init__(self, metrics: Optional[Sequence[Metric]] = None, workers: int = 4):
        self.metrics = list(metrics) if metrics is not None else list(DEFAULT_METRICS)
        self.workers = workers

    def score_pair(self, name: str, output: Image, reference: Image) -> Dict[str, object]:
        row: Dict[str, object] = {"name": name}
        for metric in self.metrics:
            metric.validate_params(output, reference)
            row[metric.name] = metric.compute(output, reference)
        return row

    @contract_operation()
    def evaluate_pairs(self, pairs: Sequence[NamedPair]) -> MetricReport:
        if not pairs:
            raise ContractViolationException("nothing to evaluate: no image pairs")
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            rows = list(pool.map(lambda p: self.score_pair(*p), pairs))
        names = [m.name for m in self.metrics]
        means = {n: sum(float(r[n]) for r in rows) / len(rows) for n in names}
        logger.info("Evaluated image pairs", extra={"count": len(rows), "means": means})
        return MetricReport(data=rows, meta={"metrics": names, "count": len(rows), "means": means})

    @io_operation()
    def load_pairs(
        self, output_dir: Union[str, Path], reference_dir: Union[str, Path]
    ) -> List[NamedPair]:
        """Pair images by file name; every reference needs an output of the same name."""
        references = dict(ImageService.load_directory(reference_dir))
        outputs = dict(ImageService.load_directory(output_dir))
        missing = sorted(set(references) - set(outputs))
        if missing:
            raise FileOperationException(
                f"no output image for reference {missing[0]}", details={"missing": missing}
            )
        return [(name, outputs[name], references[name]) for name in sorted(references)]

    def evaluate_directories(
        self, output_dir: Union[str, Path], reference_dir: Union[str, Path]
    ) -> MetricReport:
        return self.evaluate_pairs(self.load_pairs(output_dir, reference_dir))

    @staticmethod
    def format_table(report: MetricReport, delimiter: str = "\t") -> str:
        """Header, one row per image, then the mean row."""
        columns = report.columns
        lines = [delimiter.join(["filename", *columns])]
        for row in report.data:
            lines.append(delimiter.join([str(row["name"]), *(format_value(float(row[c])) for c in columns)]))
        means = report.means
        lines.append(delimiter.join([MEAN_ROW_NAME, *(format_value(means[c]) for c in columns)]))
        return "\n".join(lines) + "\n"
