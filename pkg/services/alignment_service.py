"""Paired-benchmark construction: homography from marker corners, warp, color alignment."""

from itertools import combinations
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pywt
from scipy.ndimage import map_coordinates

from models.enums import ResizeMode
from models.geometry import (
    AlignmentReport,
    CorrespondenceSet,
    Homography,
    apply_homography,
    normalize_homography,
)
from models.image import Image
from services.analytics.metrics import psnr_y
from services.image_service import ImageService
from utils.decorators import contract_operation, io_operation, measure_performance
from utils.exceptions import (
    ContractViolationException,
    DataFormatException,
    DegenerateGeometryException,
    FileOperationException,
)
from utils.system.logger import logger
from utils.validation.validators import validate_integer

WAVELET = "haar"
WAVELET_MODE = "periodization"
RANK_TOLERANCE = 1e-10
COLLINEAR_TOLERANCE = 1e-9
# inverse-mapped coordinates this close to the border still count as inside
EDGE_SLACK = 1e-9

HaarCoefficients = List[Union[np.ndarray, Tuple[np.ndarray, np.ndarray, np.ndarray]]]


def _similarity_normalizer(points: np.ndarray, which: str) -> np.ndarray:
    """Translate the centroid to the origin and scale the mean distance to sqrt(2)."""
    centroid = points.mean(axis=0)
    mean_dist = float(np.mean(np.linalg.norm(points - centroid, axis=1)))
    if mean_dist <= 0.0:
        raise DegenerateGeometryException(
            f"all {which} points coincide: the correspondence matrix has rank 0"
        )
    s = np.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def _check_no_three_collinear(points: np.ndarray, which: str) -> None:
    for i, j, k in combinations(range(len(points)), 3):
        a, b, c = points[i], points[j], points[k]
        area = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        if area <= COLLINEAR_TOLERANCE:
            raise DegenerateGeometryException(
                f"{which} points {i}, {j}, {k} are collinear: "
                "four correspondences need no three collinear points for rank 8",
                details={"points": [i, j, k]},
            )


def _check_divisible(shape: Tuple[int, ...], levels: int) -> None:
    factor = 2**levels
    if shape[0] % factor or shape[1] % factor:
        raise ContractViolationException(
            f"image size {shape[0]}x{shape[1]} is not divisible by 2^{levels} = {factor}"
        )


class AlignmentService:
    @staticmethod
    @contract_operation()
    def estimate_homography(pts: CorrespondenceSet) -> Homography:
        """Normalized DLT: least squares over all pairs via SVD of the 2n x 9 system."""
        src, dst = pts.src, pts.dst
        t_src = _similarity_normalizer(src, "source")
        t_dst = _similarity_normalizer(dst, "destination")
        ns = apply_homography(t_src, src)
        nd = apply_homography(t_dst, dst)
        if len(pts) == 4:
            _check_no_three_collinear(ns, "source")
            _check_no_three_collinear(nd, "destination")

        rows = []
        for (x, y), (u, v) in zip(ns, nd):
            rows.append([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u])
            rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v])
        a = np.asarray(rows)
        _, singular, vt = np.linalg.svd(a)
        rank = int(np.sum(singular > RANK_TOLERANCE * singular[0]))
        if rank < 8:
            raise DegenerateGeometryException(
                f"correspondence matrix has rank {rank} < 8: the homography is underdetermined",
                details={"rank": rank},
            )
        h_norm = vt[-1].reshape(3, 3)
        matrix = normalize_homography(np.linalg.inv(t_dst) @ h_norm @ t_src)

        errors = np.linalg.norm(apply_homography(matrix, src) - dst, axis=1)
        homography = Homography(matrix, float(errors.mean()), float(errors.max()))
        logger.debug(
            "Homography estimated",
            extra={"pairs": len(pts), "mean_error": homography.mean_reprojection_error},
        )
        return homography

    @staticmethod
    @contract_operation()
    def warp_image(
        img: Image, h: Homography, out_size: Tuple[int, int]
    ) -> Tuple[Image, np.ndarray]:
        """out(x) = img(h^-1 x) with bilinear sampling; outside pixels are 0.

        Returns the warped image and its boolean validity mask.
        """
        out_h, out_w = out_size
        ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
        grid = np.stack([xs.ravel(), ys.ravel()], axis=1)
        src = apply_homography(h.inverse().matrix, grid)
        sx = src[:, 0].reshape(out_h, out_w)
        sy = src[:, 1].reshape(out_h, out_w)
        valid = (
            np.isfinite(sx)
            & np.isfinite(sy)
            & (sx >= -EDGE_SLACK)
            & (sx <= img.width - 1 + EDGE_SLACK)
            & (sy >= -EDGE_SLACK)
            & (sy <= img.height - 1 + EDGE_SLACK)
        )
        sx = np.where(valid, np.clip(sx, 0.0, img.width - 1), 0.0)
        sy = np.where(valid, np.clip(sy, 0.0, img.height - 1), 0.0)

        out = np.zeros((out_h, out_w, img.channels))
        for ch in range(img.channels):
            sampled = map_coordinates(img.pixels[:, :, ch], [sy, sx], order=1, mode="nearest")
            out[:, :, ch] = np.where(valid, sampled, 0.0)
        return Image.from_array(out, clamp=True), valid

    @staticmethod
    def haar_dwt2(img: Union[Image, np.ndarray], levels: int) -> HaarCoefficients:
        """Orthonormal Haar analysis per channel: [LL_n, (H_n, V_n, D_n), ..., (H_1, V_1, D_1)]."""
        levels = validate_integer(levels, min_value=1, field_name="levels")
        arr = img.pixels if isinstance(img, Image) else np.asarray(img)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        _check_divisible(arr.shape, levels)
        return pywt.wavedec2(arr, WAVELET, mode=WAVELET_MODE, level=levels, axes=(0, 1))

    @staticmethod
    def haar_idwt2_array(coeffs: HaarCoefficients) -> np.ndarray:
        return pywt.waverec2(coeffs, WAVELET, mode=WAVELET_MODE, axes=(0, 1))

    @staticmethod
    def haar_idwt2(coeffs: HaarCoefficients) -> Image:
        return Image.from_array(AlignmentService.haar_idwt2_array(coeffs), clamp=True)

    @staticmethod
    def color_align_array(captured: Image, reference: Image, levels: int) -> np.ndarray:
        """Swap the captured image's coarsest LL band for the reference's; no clamping."""
        if captured.size != reference.size or captured.channels != reference.channels:
            raise ContractViolationException(
                f"color alignment needs equal shapes, got {captured} and {reference}"
            )
        cap = AlignmentService.haar_dwt2(captured, levels)
        ref = AlignmentService.haar_dwt2(reference, levels)
        cap[0] = ref[0]
        return AlignmentService.haar_idwt2_array(cap)

    @staticmethod
    @contract_operation()
    def color_align(captured: Image, reference: Image, levels: int) -> Image:
        return Image.from_array(
            AlignmentService.color_align_array(captured, reference, levels), clamp=True
        )

    @staticmethod
    @measure_performance(threshold=60.0)
    def align_pair(
        source: Image,
        photo: Image,
        pts: CorrespondenceSet,
        levels: int = 3,
        target_size: Optional[Tuple[int, int]] = None,
    ) -> Tuple[Image, AlignmentReport]:
        """Warp ``photo`` back onto the source plane and match its colors to ``source``.

        ``pts`` maps source-plane coordinates to photo coordinates.
        """
        if source.channels != photo.channels:
            raise ContractViolationException(
                f"source and photo channel counts differ: {source.channels} vs {photo.channels}"
            )
        _check_divisible(source.size, validate_integer(levels, min_value=1, field_name="levels"))
        h = AlignmentService.estimate_homography(pts)
        warped, valid = AlignmentService.warp_image(photo, h.inverse(), source.size)
        raw = AlignmentService.color_align_array(warped, source, levels)
        clamped = float(np.mean((raw < 0.0) | (raw > 1.0)))
        aligned = Image.from_array(raw, clamp=True)
        report = AlignmentReport(
            mean_reprojection_error=h.mean_reprojection_error,
            max_reprojection_error=h.max_reprojection_error,
            psnr_y=psnr_y(aligned, source),
            valid_fraction=float(valid.mean()),
            clamped_fraction=clamped,
            homography=h.matrix.tolist(),
        )
        if target_size is not None:
            aligned = ImageService.resize(aligned, target_size[0], target_size[1], ResizeMode.AREA)
        logger.info("Pair aligned", extra=report.as_dict())
        return aligned, report

    @staticmethod
    def parse_correspondences(text: bytes) -> CorrespondenceSet:
        """One ``src_x src_y dst_x dst_y`` line per pair; ``#`` starts a comment."""
        pairs: List[Sequence[float]] = []
        offset = 0
        for raw in text.splitlines(keepends=True):
            line = raw.split(b"#", 1)[0].strip()
            if line:
                fields = line.split()
                if len(fields) != 4:
                    raise DataFormatException(
                        f"correspondence line needs 4 numbers, got {len(fields)}",
                        details={"offset": offset},
                    )
                try:
                    pairs.append([float(f) for f in fields])
                except ValueError:
                    raise DataFormatException(
                        f"non-numeric correspondence: {line.decode('utf-8', 'replace')}",
                        details={"offset": offset},
                    )
            offset += len(raw)
        if len(pairs) < 4:
            raise DegenerateGeometryException(
                f"at least 4 correspondences are required, got {len(pairs)}"
            )
        return CorrespondenceSet(np.asarray(pairs))

    @staticmethod
    @io_operation()
    def read_correspondences(path: Union[str, Path]) -> CorrespondenceSet:
        path = Path(path)
        try:
            blob = path.read_bytes()
        except OSError as e:
            raise FileOperationException(f"cannot read correspondences {path}: {e}")
        return AlignmentService.parse_correspondences(blob)
