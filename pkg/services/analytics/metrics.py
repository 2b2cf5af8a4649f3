"""PSNR and SSIM on the BT.601 luma channel."""

import math
from functools import lru_cache

import numpy as np
from scipy.signal import convolve2d

from models.image import Image
from services.analytics.contracts import Metric
from services.image_service import ImageService
from utils.exceptions import ContractViolationException

PEAK = 1.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _require_same_size(a: Image, b: Image) -> None:
    if a.size != b.size:
        raise ContractViolationException(
            f"metric inputs differ in size: {a.size} vs {b.size}"
        )


@lru_cache(maxsize=4)
def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-D gaussian, the outer product of two 1-D windows."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    g /= g.sum()
    window = np.outer(g, g)
    window.flags.writeable = False
    return window


def psnr_y(a: Image, b: Image) -> float:
    """10 log10(1 / MSE) on Y; ``math.inf`` when the luma planes are identical."""
    _require_same_size(a, b)
    diff = ImageService.luma_plane(a) - ImageService.luma_plane(b)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / mse)


def ssim_y(a: Image, b: Image) -> float:
    """Single-scale SSIM on Y, averaged over fully covered window positions."""
    _require_same_size(a, b)
    if min(a.size) < SSIM_WINDOW:
        raise ContractViolationException(
            f"ssim needs both dimensions >= {SSIM_WINDOW}, got {a.size}"
        )
    x = ImageService.luma_plane(a)
    y = ImageService.luma_plane(b)
    window = gaussian_window()
    c1 = (SSIM_K1 * PEAK) ** 2
    c2 = (SSIM_K2 * PEAK) ** 2

    def filt(plane: np.ndarray) -> np.ndarray:
        return convolve2d(plane, window, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    # the three second moments share one form so ssim(x, x) is exactly 1
    var_x = filt(x * x) - mu_x * mu_x
    var_y = filt(y * y) - mu_y * mu_y
    cov = filt(x * y) - mu_x * mu_y
    numerator = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(numerator / denominator))


class PsnrY(Metric):
    @property
    def name(self) -> str:
        return "psnr_y"

    @property
    def description(self) -> str:
        return "Peak signal-to-noise ratio on the luma channel, peak 1.0 (dB)."

    def validate_params(self, a: Image, b: Image) -> None:
        _require_same_size(a, b)

    def compute(self, a: Image, b: Image) -> float:
        return psnr_y(a, b)


class SsimY(Metric):
    @property
    def name(self) -> str:
        return "ssim_y"

    @property
    def description(self) -> str:
        return "Structural similarity on the luma channel (11x11 gaussian window, sigma 1.5)."

    def validate_params(self, a: Image, b: Image) -> None:
        _require_same_size(a, b)
        if min(a.size) < SSIM_WINDOW:
            raise ContractViolationException(
                f"ssim needs both dimensions >= {SSIM_WINDOW}, got {a.size}"
            )

    def compute(self, a: Image, b: Image) -> float:
        return ssim_y(a, b)


DEFAULT_METRICS = (PsnrY(), SsimY())
