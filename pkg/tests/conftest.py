import logging
from typing import List

import numpy as np
import pytest

from models.image import Image
from models.recipes import ModelConfig
from numerics.tensor import get_dtype, precision
from services.conditioning_service import ConditionEncoders, LatentCodec, SemanticEncoder
from services.image_service import ImageService
from services.training_service import TrainResult
from tests.utils.toy import train_toy_teacher


@pytest.fixture
def temp_log_dir(tmp_path):
    """Create a temporary directory for logs with proper permissions."""
    log_dir = tmp_path / "logs"
    log_dir.mkdir(exist_ok=True)
    return log_dir


@pytest.fixture(autouse=True)
def clean_logs(temp_log_dir):
    """Release handlers left behind by logger tests before each test."""
    logging.shutdown()

    loggers = [logging.getLogger()] + [
        logging.getLogger(name) for name in logging.root.manager.loggerDict
    ]
    for logger in loggers:
        if not isinstance(logger, logging.Logger):
            continue
        for handler in logger.handlers[:]:
            if isinstance(handler, logging.FileHandler):
                handler.close()
                logger.removeHandler(handler)

    for file in temp_log_dir.glob("*.log"):
        try:
            file.unlink()
        except (PermissionError, FileNotFoundError):
            pass
    yield


@pytest.fixture
def f64():
    """Run the test body in float64 precision."""
    with precision("f64"):
        assert get_dtype() is np.float64
        yield


@pytest.fixture(scope="session")
def toy_teacher() -> TrainResult:
    """Overfit teacher on the eight-image toy corpus; trained once per session."""
    return train_toy_teacher()


@pytest.fixture
def tiny_config() -> ModelConfig:
    """Backbone small enough for finite differences (a few thousand parameters)."""
    return ModelConfig(
        dim=16,
        depth=1,
        heads=2,
        patch=2,
        mlp_ratio=2,
        d_sem=8,
        latent_channels=12,
        freq_dim=8,
        max_tokens=64,
    )


@pytest.fixture
def tiny_encoders() -> ConditionEncoders:
    """fold 2 codec on RGB (12 latent channels), x2 scale, 2x2 semantic patches."""
    return ConditionEncoders(LatentCodec(fold=2, channels=3), SemanticEncoder(patch=2, dim=8, seed=7), 2)


@pytest.fixture
def hr_images() -> List[Image]:
    return ImageService.generate_corpus(seed=3, count=4, size=16, kinds=["mixed"], channels=3)


@pytest.fixture
def lr_images(hr_images) -> List[Image]:
    return [ImageService.downsample(img, 2) for img in hr_images]
