import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import correlate1d

from models.image import Image
from models.recipes import DegradeParams
from numerics.random import derive_seed, philox
from services.image_service import ImageService
from utils.decorators import contract_operation
from utils.exceptions import ContractViolationException
from utils.system.logger import logger
from utils.validation.validators import require, validate_float, validate_integer

BLOCK = 8
# smallest quantizer step; keeps quality 100 within 2/255 of the input
MIN_QUANT_STEP = 1.0 / 32.0

# Standard JPEG (Annex K) luminance and chrominance tables
LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)
CHROMA_TABLE = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.float64,
)

# JFIF full-range YCbCr
_RGB_TO_YCC = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCC_TO_RGB = np.linalg.inv(_RGB_TO_YCC)


def quantization_table(base: np.ndarray, quality: int) -> np.ndarray:
    """IJG quality scaling of a base table."""
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.maximum(base * scale / 100.0, MIN_QUANT_STEP)


def blur_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def _to_blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).transpose(0, 2, 1, 3)


def _from_blocks(blocks: np.ndarray) -> np.ndarray:
    bh, bw = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(bh * BLOCK, bw * BLOCK)


def _quantize_plane(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    blocks = _to_blocks(plane - 128.0)
    coeffs = dctn(blocks, type=2, axes=(-2, -1), norm="ortho")
    quantized = np.trunc(coeffs / table) * table
    # DC is carried losslessly
    quantized[..., 0, 0] = coeffs[..., 0, 0]
    return _from_blocks(idctn(quantized, type=2, axes=(-2, -1), norm="ortho")) + 128.0


class DegradationService:
    @staticmethod
    @contract_operation()
    def gaussian_blur(img: Image, sigma: float) -> Image:
        """Separable Gaussian blur, kernel size 2*ceil(3 sigma)+1, reflect padding."""
        sigma = validate_float(sigma, min_value=0.0, field_name="sigma")
        if sigma == 0.0:
            return img
        kernel = blur_kernel(sigma)
        out = correlate1d(img.pixels, kernel, axis=0, mode="reflect")
        out = correlate1d(out, kernel, axis=1, mode="reflect")
        return Image(np.clip(out, 0.0, 1.0))

    @staticmethod
    @contract_operation()
    def add_gaussian_noise(img: Image, sigma: float, seed: int) -> Image:
        sigma = validate_float(sigma, min_value=0.0, field_name="sigma")
        if sigma == 0.0:
            return img
        noise = philox(seed).standard_normal(img.pixels.shape)
        return Image(np.clip(img.pixels + sigma * noise, 0.0, 1.0))

    @staticmethod
    @contract_operation()
    def jpeg_like_compress(img: Image, quality: int) -> Image:
        """Blockwise DCT quantization of the Y/Cb/Cr planes at a JPEG-style quality."""
        quality = validate_integer(quality, min_value=1, max_value=100, field_name="quality")
        h, w = img.size
        pad_h, pad_w = -h % BLOCK, -w % BLOCK
        arr = np.pad(img.pixels * 255.0, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")

        if img.channels == 1:
            planes = [arr[:, :, 0]]
            tables = [LUMA_TABLE]
        else:
            ycc = arr @ _RGB_TO_YCC.T
            ycc[:, :, 1:] += 128.0
            planes = [ycc[:, :, i] for i in range(3)]
            tables = [LUMA_TABLE, CHROMA_TABLE, CHROMA_TABLE]

        restored = np.stack(
            [
                _quantize_plane(plane, quantization_table(table, quality))
                for plane, table in zip(planes, tables)
            ],
            axis=-1,
        )
        if img.channels == 3:
            restored[:, :, 1:] -= 128.0
            restored = restored @ _YCC_TO_RGB.T
        out = restored[:h, :w] / 255.0
        return Image(np.clip(out, 0.0, 1.0))

    @staticmethod
    @contract_operation()
    def degrade_pipeline(hr: Image, params: DegradeParams, seed: int) -> Image:
        """Blur, area-downsample, noise and compress; the second stage repeats on the LR grid."""
        scale = params.scale
        if hr.height % scale != 0 or hr.width % scale != 0:
            raise ContractViolationException(
                f"HR size {hr.height}x{hr.width} is not divisible by scale {scale}",
                details={"scale": scale},
            )
        rng = philox(seed)

        blur, noise, quality = params.draw(rng)
        out = DegradationService.gaussian_blur(hr, blur)
        out = ImageService.downsample(out, scale)
        out = DegradationService.add_gaussian_noise(out, noise, derive_seed(seed, "noise", 0))
        out = DegradationService.jpeg_like_compress(out, quality)

        if params.second_stage:
            blur, noise, quality = params.draw(rng)
            out = DegradationService.gaussian_blur(out, blur)
            out = DegradationService.add_gaussian_noise(out, noise, derive_seed(seed, "noise", 1))
            out = DegradationService.jpeg_like_compress(out, quality)
        return out

    @staticmethod
    def degrade_batch(
        images: Sequence[Image], params: DegradeParams, seed: int, workers: int = 4
    ) -> List[Image]:
        """Per-image derived seeds, so output is independent of worker scheduling."""
        require(len(images) > 0, "cannot degrade an empty batch")

        def run(index: int) -> Image:
            return DegradationService.degrade_pipeline(
                images[index], params, derive_seed(seed, "degrade", index)
            )

        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(run, range(len(images))))
        logger.debug("Degraded batch", extra={"count": len(out), "scale": params.scale})
        return out
