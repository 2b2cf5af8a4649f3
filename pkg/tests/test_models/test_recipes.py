import pytest
from pydantic import ValidationError

from models.enums import AuxBranch, DistillVariant, GuidanceStyle, RcCoefficients
from models.recipes import DegradeParams, DistillConfig, GuidanceConfig, ModelConfig, SampleConfig, TrainRecipe
from numerics.random import philox


class TestTrainRecipe:
    def test_defaults_snapshot(self):
        snapshot = TrainRecipe().snapshot()
        assert snapshot["beta1"] == 0.9
        assert snapshot["beta2"] == 0.95
        assert snapshot["weight_decay"] == 0.01
        assert snapshot["grad_clip"] == 1.0
        assert snapshot["ema_decay"] == 0.9999
        assert snapshot["lr_schedule"] == "constant"
        assert snapshot["warmup_steps"] == 0
        assert snapshot["aux_branch"] == "partial"
        assert snapshot["alpha_range"] == [0.05, 0.25]

    def test_model_defaults(self):
        cfg = ModelConfig()
        assert (cfg.patch, cfg.mlp_ratio) == (2, 4)
        assert cfg.semantic_enabled and not cfg.student_mode
        assert cfg.as_student().student_mode

    def test_warmup_and_schedule_are_fixed(self):
        with pytest.raises(ValidationError):
            TrainRecipe(warmup_steps=10)
        with pytest.raises(ValidationError):
            TrainRecipe(lr_schedule="cosine")

    @pytest.mark.parametrize("alpha_range", [(0.0, 0.2), (0.3, 0.2), (0.1, 1.0)])
    def test_alpha_range_checked(self, alpha_range):
        with pytest.raises(ValidationError):
            TrainRecipe(alpha_range=alpha_range)

    def test_unknown_field_rejected(self):
        with pytest.raises(ValidationError):
            TrainRecipe(learning_rate=1.0)

    def test_enum_coercion(self):
        assert TrainRecipe(aux_branch="unconditional").aux_branch is AuxBranch.UNCONDITIONAL


class TestModelConfig:
    def test_heads_must_divide_dim(self):
        with pytest.raises(ValidationError):
            ModelConfig(dim=20, heads=3)

    def test_dim_multiple_of_four(self):
        with pytest.raises(ValidationError):
            ModelConfig(dim=6, heads=1)

    def test_odd_freq_dim(self):
        with pytest.raises(ValidationError):
            ModelConfig(freq_dim=7)


class TestOtherRecipes:
    def test_distill_defaults(self):
        cfg = DistillConfig()
        assert cfg.variant is DistillVariant.RC
        assert cfg.rc_coefficients is RcCoefficients.TIME_WEIGHTED
        assert (cfg.delta_t, cfg.rollout_steps, cfg.omega, cfg.p_r_equals_t) == (0.25, 4, 1.5, 0.25)
        assert cfg.clip_range == (-1.0, 1.0)

    def test_sample_defaults(self):
        cfg = SampleConfig()
        assert cfg.steps == 25
        assert cfg.guidance == GuidanceConfig(scale=1.0, alpha_infer=0.15, style=GuidanceStyle.RESTORATION)

    def test_degrade_ranges_validated(self):
        with pytest.raises(ValidationError):
            DegradeParams(blur_sigma=(1.0, 0.5))
        with pytest.raises(ValidationError):
            DegradeParams(jpeg_quality=(0, 50))
        with pytest.raises(ValidationError):
            DegradeParams(scale=1)

    def test_degrade_draw_stays_in_range(self):
        params = DegradeParams()
        rng = philox(0)
        for _ in range(20):
            blur, noise, quality = params.draw(rng)
            assert 0.1 <= blur <= 1.2
            assert 0.0 <= noise <= 0.05
            assert 30 <= quality <= 95

    def test_records_are_frozen(self):
        cfg = SampleConfig()
        with pytest.raises(ValidationError):
            cfg.steps = 3
