from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from utils.exceptions import ContractViolationException, DegenerateGeometryException

DET_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Point pairs ``(src_x, src_y, dst_x, dst_y)`` in pixel coordinates."""

    pairs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pairs, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ContractViolationException(
                f"correspondences must be an n x 4 array, got shape {arr.shape}"
            )
        if arr.shape[0] < 4:
            raise DegenerateGeometryException(
                f"at least 4 correspondences are required, got {arr.shape[0]}"
            )
        if not np.all(np.isfinite(arr)):
            raise ContractViolationException("correspondences contain non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "pairs", arr)

    @classmethod
    def from_points(
        cls, src: Sequence[Sequence[float]], dst: Sequence[Sequence[float]]
    ) -> "CorrespondenceSet":
        src_arr = np.asarray(src, dtype=np.float64)
        dst_arr = np.asarray(dst, dtype=np.float64)
        if src_arr.shape != dst_arr.shape:
            raise ContractViolationException(
                f"source and destination point lists differ: {src_arr.shape} vs {dst_arr.shape}"
            )
        return cls(np.hstack([src_arr, dst_arr]))

    @property
    def src(self) -> np.ndarray:
        return self.pairs[:, :2]

    @property
    def dst(self) -> np.ndarray:
        return self.pairs[:, 2:]

    def __len__(self) -> int:
        return self.pairs.shape[0]

    def swapped(self) -> "CorrespondenceSet":
        return CorrespondenceSet(np.hstack([self.dst, self.src]))


def apply_homography(matrix: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Map ``n x 2`` points through a 3 x 3 projective matrix."""
    pts = np.asarray(points, dtype=np.float64)
    homog = np.hstack([pts, np.ones((pts.shape[0], 1))]) @ matrix.T
    return homog[:, :2] / homog[:, 2:3]


@dataclass(frozen=True, eq=False)
class Homography:
    """3 x 3 projective transform, scaled so h33 = 1 (unit Frobenius norm if h33 ~ 0)."""

    matrix: np.ndarray
    mean_reprojection_error: float = 0.0
    max_reprojection_error: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ContractViolationException(f"homography must be 3 x 3, got {m.shape}")
        if abs(np.linalg.det(m)) <= DET_TOLERANCE:
            raise DegenerateGeometryException(
                "homography is singular (|det| <= 1e-12)",
                details={"det": float(np.linalg.det(m))},
            )
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return apply_homography(self.matrix, points)

    def inverse(self) -> "Homography":
        inv = np.linalg.inv(self.matrix)
        return Homography(normalize_homography(inv))


def normalize_homography(matrix: np.ndarray) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    if abs(m[2, 2]) > 1e-12 * np.linalg.norm(m):
        return m / m[2, 2]
    return m / np.linalg.norm(m)


@dataclass
class AlignmentReport:
    mean_reprojection_error: float
    max_reprojection_error: float
    psnr_y: float
    valid_fraction: float
    clamped_fraction: float
    homography: List[List[float]] = field(default_factory=list)

    def as_dict(self) -> Dict[str, object]:
        return {
            "mean_reprojection_error": self.mean_reprojection_error,
            "max_reprojection_error": self.max_reprojection_error,
            "psnr_y": self.psnr_y,
            "valid_fraction": self.valid_fraction,
            "clamped_fraction": self.clamped_fraction,
            "homography": self.homography,
        }
