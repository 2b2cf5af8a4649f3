import numpy as np
import pytest

from models.conditioning import CondMode
from models.enums import AuxBranch, CondKind, GuidanceStyle
from models.image import Image
from models.recipes import GuidanceConfig
from numerics.random import philox
from services.conditioning_service import (
    ConditionEncoders,
    ConditioningService,
    LatentCodec,
    SemanticEncoder,
)
from utils.exceptions import ContractViolationException


class TestLatentCodec:
    def test_round_trip_is_exact(self, f64):
        codec = LatentCodec(fold=4, channels=3)
        img = Image(philox(1).uniform(size=(64, 64, 3)))
        z = codec.encode(img)
        assert z.shape == (16, 16, 48)
        assert np.max(np.abs(codec.decode(z).pixels - img.pixels)) == 0.0

    def test_constant_image_latent(self):
        codec = LatentCodec(fold=2, channels=3)
        z = codec.encode(Image.constant(8, 8, 0.5))
        assert z.shape == (4, 4, 12)
        expected = np.broadcast_to((0.5 - codec.mean) / codec.std, z.shape)
        np.testing.assert_allclose(z, expected)

    def test_indivisible_size(self):
        with pytest.raises(ContractViolationException):
            LatentCodec(fold=4).encode(Image.constant(10, 8, 0.5))

    def test_channel_mismatch(self):
        with pytest.raises(ContractViolationException):
            LatentCodec(fold=2, channels=3).encode(Image.constant(4, 4, 0.5, channels=1))

    def test_bad_normalization(self):
        with pytest.raises(ContractViolationException):
            LatentCodec(fold=1, channels=1, std=np.zeros(1))


class TestStructuralCondition:
    def test_shape_matches_latent(self, tiny_encoders, lr_images, hr_images):
        c_str = tiny_encoders.conditions(lr_images[0]).c_str
        assert c_str.shape == tiny_encoders.codec.encode(hr_images[0]).shape

    def test_constant_lr(self):
        codec = LatentCodec(fold=2, channels=3)
        hr = Image.constant(8, 8, 0.25)
        lr = Image.constant(4, 4, 0.25)
        np.testing.assert_array_equal(
            ConditioningService.make_structural_condition(lr, (8, 8), codec), codec.encode(hr)
        )

    def test_non_integer_scale(self):
        with pytest.raises(ContractViolationException):
            ConditioningService.make_structural_condition(
                Image.constant(4, 4, 0.5), (10, 10), LatentCodec(fold=2)
            )


class TestSemanticEncoder:
    def test_token_shape_and_determinism(self):
        encoder = SemanticEncoder(patch=4, dim=64, seed=3)
        lr = Image(philox(2).uniform(size=(16, 16, 3)))
        tokens = encoder.encode(lr)
        assert tokens.shape == (16, 64)
        np.testing.assert_array_equal(tokens, SemanticEncoder(patch=4, dim=64, seed=3).encode(lr))

    def test_patch_swap_swaps_tokens(self):
        encoder = SemanticEncoder(patch=4, dim=8, seed=0)
        arr = philox(3).uniform(size=(8, 8, 3))
        swapped = arr.copy()
        swapped[0:4, 0:4], swapped[4:8, 4:8] = arr[4:8, 4:8], arr[0:4, 0:4]
        a = encoder.encode(Image(arr))
        b = encoder.encode(Image(swapped))
        np.testing.assert_allclose(b[0], a[3], atol=1e-12)
        np.testing.assert_allclose(b[3], a[0], atol=1e-12)
        np.testing.assert_allclose(b[1:3], a[1:3], atol=1e-12)

    def test_indivisible_lr(self):
        with pytest.raises(ContractViolationException):
            SemanticEncoder(patch=4).encode(Image.constant(6, 8, 0.5))

    def test_encoders_header_round_trip(self, tiny_encoders, lr_images):
        rebuilt = ConditionEncoders.from_header(tiny_encoders.header())
        np.testing.assert_array_equal(
            rebuilt.conditions(lr_images[1]).c_sem, tiny_encoders.conditions(lr_images[1]).c_sem
        )


class TestCondModeSampling:
    def test_never_partial_at_zero(self):
        rng = philox(0)
        c_str = np.ones((2, 2, 3))
        for _ in range(50):
            assert ConditioningService.sample_cond_mode(rng, c_str, np.ones((4, 2)), 0.0, (0.05, 0.25)).kind is CondKind.FULL

    def test_always_partial_at_one(self):
        rng = philox(1)
        c_str = philox(2).normal(size=(2, 2, 3))
        for _ in range(50):
            mode = ConditioningService.sample_cond_mode(rng, c_str, np.ones((4, 2)), 1.0, (0.05, 0.25))
            assert mode.kind is CondKind.PARTIAL
            assert 0.05 <= mode.alpha <= 0.25
            np.testing.assert_allclose(mode.c_str, mode.alpha * c_str)
            assert mode.c_sem is None

    def test_unconditional_aux_branch(self):
        mode = ConditioningService.sample_cond_mode(
            philox(0), np.ones((2, 2, 3)), np.ones((4, 2)), 1.0, (0.1, 0.2), AuxBranch.UNCONDITIONAL
        )
        assert mode.kind is CondKind.UNCONDITIONAL

    @pytest.mark.slow
    def test_partial_fraction(self):
        rng = philox(42)
        c_str = np.ones((1, 1, 1))
        partial = sum(
            ConditioningService.sample_cond_mode(rng, c_str, np.ones((1, 2)), 0.1, (0.05, 0.25)).kind
            is CondKind.PARTIAL
            for _ in range(10_000)
        )
        assert abs(partial / 10_000 - 0.1) <= 0.01

    def test_invalid_alpha_range(self):
        with pytest.raises(ContractViolationException):
            ConditioningService.sample_cond_mode(philox(0), np.ones(1), np.ones(1), 0.1, (0.0, 0.2))


class TestGuidance:
    @pytest.fixture
    def branches(self):
        rng = philox(5)
        return rng.normal(size=(3, 3, 4)), rng.normal(size=(3, 3, 4))

    def test_endpoints_are_exact(self, branches):
        v_cond, v_p = branches
        assert np.array_equal(ConditioningService.guide(v_cond, v_p, GuidanceConfig(scale=1.0)), v_cond)
        assert np.array_equal(ConditioningService.guide(v_cond, v_p, GuidanceConfig(scale=0.0)), v_p)

    def test_extrapolation(self):
        out = ConditioningService.guide(np.full(4, 2.0), np.zeros(4), GuidanceConfig(scale=1.5))
        np.testing.assert_allclose(out, 3.0)

    @pytest.mark.parametrize("scale", [0.0, 0.4, 1.0, 2.5])
    def test_linearity(self, branches, scale):
        v_cond, v_p = branches
        out = ConditioningService.guide(v_cond, v_p, GuidanceConfig(scale=scale))
        assert np.linalg.norm(out - v_cond) == pytest.approx(abs(1.0 - scale) * np.linalg.norm(v_cond - v_p))

    def test_none_style_ignores_scale(self, branches):
        v_cond, v_p = branches
        cfg = GuidanceConfig(scale=3.0, style=GuidanceStyle.NONE)
        assert np.array_equal(ConditioningService.guide(v_cond, v_p, cfg), v_cond)

    def test_t2i_baseline_matches_guide(self, branches):
        v_full, v_nosem = branches
        assert np.array_equal(ConditioningService.guide_t2i_baseline(v_full, v_nosem, 1.0), v_full)
        assert np.array_equal(ConditioningService.guide_t2i_baseline(v_full, v_nosem, 0.0), v_nosem)
        np.testing.assert_array_equal(
            ConditioningService.guide_t2i_baseline(v_full, v_nosem, 0.7),
            ConditioningService.guide(v_full, v_nosem, GuidanceConfig(scale=0.7)),
        )

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolationException):
            ConditioningService.guide(np.zeros(3), np.zeros(4), GuidanceConfig())

    @pytest.mark.parametrize(
        "style, kind",
        [
            (GuidanceStyle.RESTORATION, CondKind.PARTIAL),
            (GuidanceStyle.T2I_BASELINE, CondKind.NO_SEMANTIC),
            (GuidanceStyle.STANDARD_CFG, CondKind.UNCONDITIONAL),
        ],
    )
    def test_auxiliary_mode_per_style(self, style, kind):
        mode = ConditioningService.auxiliary_mode(style, np.ones((2, 2, 3)), 0.15)
        assert mode.kind is kind

    def test_no_auxiliary_for_none(self):
        assert ConditioningService.auxiliary_mode(GuidanceStyle.NONE, np.ones(2), 0.15) is None

    def test_stack_modes(self):
        modes = [CondMode.no_semantic(np.full((2, 2, 1), v)) for v in (1.0, 2.0)]
        assert ConditioningService.stack_modes(modes).shape == (2, 2, 2, 1)
