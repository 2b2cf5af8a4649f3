"""The toy teacher shared by the overfit and distillation-ordering tests."""

from typing import List

from models.image import Image
from models.recipes import DegradeParams, ModelConfig, TrainRecipe
from services.conditioning_service import ConditionEncoders, LatentCodec, SemanticEncoder
from services.image_service import ImageService
from services.training_service import TrainingService, TrainResult

TOY_SIZE = 16
TOY_SCALE = 2


def toy_encoders() -> ConditionEncoders:
    return ConditionEncoders(LatentCodec(fold=2, channels=3), SemanticEncoder(patch=2, dim=8, seed=7), TOY_SCALE)


def toy_corpus() -> List[Image]:
    return ImageService.generate_corpus(seed=8, count=8, size=TOY_SIZE, kinds=["mixed", "blobs"])


def toy_lows() -> List[Image]:
    return [ImageService.downsample(img, TOY_SCALE) for img in toy_corpus()]


def train_toy_teacher(semantic_enabled: bool = True) -> TrainResult:
    """2000 steps at batch 8 on the 16x16 corpus with area-downsampled LR."""
    config = ModelConfig(
        dim=32, depth=2, heads=4, patch=2, mlp_ratio=4, d_sem=8, latent_channels=12, freq_dim=16,
        max_tokens=64, semantic_enabled=semantic_enabled,
    )
    recipe = TrainRecipe(steps=2000, batch=8, lr=1e-3, ema_decay=0.99, seed=1)
    return TrainingService.train(
        toy_corpus(), recipe, config, toy_encoders(), DegradeParams(scale=TOY_SCALE), lr_images=toy_lows()
    )
