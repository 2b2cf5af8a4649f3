from services.analytics.contracts import Metric, MetricReport
from services.analytics.engine import EvaluationEngine
from services.analytics.metrics import PsnrY, SsimY, psnr_y, ssim_y

__all__ = [
    "EvaluationEngine",
    "Metric",
    "MetricReport",
    "PsnrY",
    "SsimY",
    "psnr_y",
    "ssim_y",
]
