import math

import numpy as np
import pytest

from models.conditioning import CondMode
from models.recipes import ModelConfig
from numerics import ops
from numerics.gradcheck import finite_diff_check
from numerics.random import philox
from numerics.tensor import Tensor
from services.backbone.network import (
    BackboneService,
    DiffusionTransformer,
    frequency_ladder,
    init_params,
    parameter_count,
    timestep_features,
)
from utils.exceptions import ContractViolationException


def _inputs(config: ModelConfig, batch: int = 2, grid: int = 4, seed: int = 0):
    rng = philox(seed)
    shape = (grid, grid, config.latent_channels)
    z = rng.standard_normal((batch,) + shape)
    c_str = [rng.standard_normal(shape) for _ in range(batch)]
    c_sem = [rng.standard_normal((4, config.d_sem)) for _ in range(batch)]
    return z, c_str, c_sem


def _with_random_head(model: DiffusionTransformer, seed: int = 1) -> DiffusionTransformer:
    rng = philox(seed)
    for name in ("final.head.weight", "final.head.bias"):
        shape = model.params[name].shape
        model.params.set(name, 0.3 * rng.standard_normal(shape))
    return model


class TestTimestepFeatures:
    def test_zero_time(self):
        feats = timestep_features(0.0, 8)
        np.testing.assert_array_equal(feats[0, 0::2], 0.0)
        np.testing.assert_array_equal(feats[0, 1::2], 1.0)

    def test_lowest_frequency_period(self):
        omega = frequency_ladder(8)
        t = 0.3
        shifted = t + 2.0 * math.pi / omega[-1]
        a = timestep_features(t, 8)[0]
        b = timestep_features(shifted, 8)[0]
        np.testing.assert_allclose(b[-2:], a[-2:], atol=1e-9)

    def test_odd_dim_rejected(self):
        with pytest.raises(ContractViolationException):
            timestep_features(0.5, 7)

    def test_embedding_length(self, tiny_config):
        model = BackboneService.create(tiny_config)
        assert model.timestep_embedding(model.params, [0.1, 0.9]).shape == (2, tiny_config.dim)


class TestInitialisation:
    def test_zero_velocity_at_init(self, tiny_config):
        model = BackboneService.create(tiny_config, seed=3)
        z, c_str, c_sem = _inputs(tiny_config)
        out = model.forward_batch(z, [0.2, 0.8], [0.2, 0.8], [CondMode.full(c, s) for c, s in zip(c_str, c_sem)])
        assert out.shape == z.shape
        assert not np.any(out.data)

    def test_same_seed_same_params(self, tiny_config):
        a = init_params(tiny_config, 5)
        b = init_params(tiny_config, 5)
        for name in a.names():
            assert a[name].data.tobytes() == b[name].data.tobytes()

    def test_parameter_count_formula(self):
        config = ModelConfig(dim=128, depth=4, heads=4)
        assert init_params(config, 0).count() == parameter_count(config)
        student = config.as_student()
        assert init_params(student, 0).count() == parameter_count(student)

    def test_tiny_config_is_small(self, tiny_config):
        assert parameter_count(tiny_config) <= 10_000

    def test_missing_parameters_rejected(self, tiny_config):
        with pytest.raises(ContractViolationException):
            DiffusionTransformer(tiny_config.as_student(), init_params(tiny_config, 0))


class TestForward:
    def test_deterministic(self, tiny_config):
        model = _with_random_head(BackboneService.create(tiny_config))
        z, c_str, c_sem = _inputs(tiny_config, batch=1)
        mode = CondMode.full(c_str[0], c_sem[0])
        a = model.forward(z[0], 0.4, 0.4, mode)
        b = model.forward(z[0], 0.4, 0.4, mode)
        assert a.tobytes() == b.tobytes()

    def test_full_and_partial_differ(self, tiny_config):
        model = _with_random_head(BackboneService.create(tiny_config, seed=2))
        z, c_str, c_sem = _inputs(tiny_config, batch=1)
        full = model.forward(z[0], 0.5, 0.5, CondMode.full(c_str[0], c_sem[0]))
        partial = model.forward(z[0], 0.5, 0.5, CondMode.partial(c_str[0], 0.15))
        assert np.linalg.norm(full - partial) > 0.0

    def test_null_token_ignores_semantics(self, f64, tiny_config):
        model = _with_random_head(BackboneService.create(tiny_config))
        z, c_str, _ = _inputs(tiny_config, batch=1)
        mode = CondMode.no_semantic(c_str[0])
        base = model.forward(z[0], 0.3, 0.3, mode)
        # a batch neighbour carrying semantic tokens must not leak into the null-token sample
        z_pair = np.stack([z[0], z[0]])
        other = CondMode.full(c_str[0], philox(9).standard_normal((4, tiny_config.d_sem)))
        paired = model.forward_batch(z_pair, [0.3, 0.3], [0.3, 0.3], [mode, other]).numpy()
        np.testing.assert_allclose(paired[0], base, atol=1e-6)

    def test_semantic_disabled_uses_null_token(self, tiny_config):
        config = tiny_config.model_copy(update={"semantic_enabled": False})
        model = _with_random_head(BackboneService.create(config))
        z, c_str, c_sem = _inputs(config, batch=1)
        full = model.forward(z[0], 0.5, 0.5, CondMode.full(c_str[0], c_sem[0]))
        nosem = model.forward(z[0], 0.5, 0.5, CondMode.no_semantic(c_str[0]))
        np.testing.assert_array_equal(full, nosem)

    def test_student_with_zero_r_path_matches_teacher(self, tiny_config):
        teacher = _with_random_head(BackboneService.create(tiny_config))
        student = DiffusionTransformer.student_from_teacher(teacher, seed=4)
        assert student.student_mode
        z, c_str, c_sem = _inputs(tiny_config, batch=1)
        mode = CondMode.full(c_str[0], c_sem[0])
        np.testing.assert_array_equal(
            student.forward(z[0], 0.7, 0.2, mode), teacher.forward(z[0], 0.7, 0.7, mode)
        )

    def test_student_does_not_alias_teacher(self, tiny_config):
        teacher = BackboneService.create(tiny_config)
        student = DiffusionTransformer.student_from_teacher(teacher)
        for name in teacher.params.names():
            assert student.params[name] is not teacher.params[name]

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda z, modes, t: (z[..., :-1], modes, t),
            lambda z, modes, t: (z[:, :3, :3], modes, t),
            lambda z, modes, t: (z, modes[:1], t),
            lambda z, modes, t: (z[0], modes, t),
        ],
    )
    def test_shape_errors(self, tiny_config, mutate):
        model = BackboneService.create(tiny_config)
        z, c_str, c_sem = _inputs(tiny_config)
        modes = [CondMode.full(c, s) for c, s in zip(c_str, c_sem)]
        z_bad, modes_bad, t = mutate(z, modes, [0.5, 0.5])
        with pytest.raises(ContractViolationException):
            model.forward_batch(z_bad, t, t, modes_bad)

    def test_token_budget(self, tiny_config):
        config = tiny_config.model_copy(update={"max_tokens": 2})
        model = BackboneService.create(config)
        z, c_str, c_sem = _inputs(config, batch=1)
        with pytest.raises(ContractViolationException):
            model.forward(z[0], 0.5, 0.5, CondMode.full(c_str[0], c_sem[0]))


@pytest.mark.numerics
class TestBackboneGradients:
    def test_velocity_loss_matches_finite_differences(self, f64, tiny_config):
        model = _with_random_head(BackboneService.create(tiny_config.as_student(), seed=6))
        z, c_str, c_sem = _inputs(tiny_config, seed=7)
        modes = [CondMode.full(c_str[0], c_sem[0]), CondMode.partial(c_str[1], 0.2)]
        target = Tensor(philox(8).standard_normal(z.shape))

        def loss(params):
            out = model.forward_batch(z, [0.3, 0.9], [0.1, 0.5], modes, params=params)
            return ops.mean(ops.square(ops.sub(out, target)))

        error = finite_diff_check(loss, model.params, eps=1e-5, max_coordinates=6, abs_floor=1e-3)
        assert error <= 1e-5
