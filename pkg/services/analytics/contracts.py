from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, Type

from models.image import Image


@dataclass
class MetricReport:
    """Per-image rows (``name`` plus one column per metric) and aggregate means."""

    data: List[Dict[str, Any]]
    meta: Dict[str, Any]

    @property
    def columns(self) -> List[str]:
        return list(self.meta.get("metrics", []))

    @property
    def means(self) -> Dict[str, float]:
        return dict(self.meta.get("means", {}))


class Metric(ABC):
    """Abstract base class for full-reference image metrics."""

    @property
    @abstractmethod
    def name(self) -> str:
        """Unique identifier for the metric (also its table column)."""
        pass

    @property
    @abstractmethod
    def description(self) -> str:
        pass

    @property
    def output_schema(self) -> Dict[str, Type]:
        return {self.name: float}

    @abstractmethod
    def compute(self, a: Image, b: Image) -> float:
        """Score ``a`` against the reference ``b``."""
        pass

    def validate_params(self, a: Image, b: Image) -> None:
        """Optional hook to validate the pair before computing."""
        pass
