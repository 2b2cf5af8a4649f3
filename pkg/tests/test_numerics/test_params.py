import numpy as np
import pytest

from numerics.params import ModelParams
from numerics.tensor import Tensor
from utils.exceptions import ContractViolationException


@pytest.fixture
def params() -> ModelParams:
    return ModelParams({"w": Tensor(np.arange(6.0).reshape(2, 3)), "b": Tensor(np.zeros(3))})


class TestModelParams:
    def test_names_keep_insertion_order(self, params):
        assert params.names() == ["w", "b"]
        assert params.count() == 9
        assert params["w"].name == "w"

    def test_ema_starts_at_weights(self, params):
        np.testing.assert_array_equal(params.ema["w"], params["w"].data)

    def test_set_replaces_tensor(self, params):
        params.set("b", np.ones(3))
        np.testing.assert_array_equal(params["b"].data, np.ones(3))

    def test_set_rejects_shape_change(self, params):
        with pytest.raises(ContractViolationException):
            params.set("b", np.ones(4))

    def test_unknown_name(self, params):
        with pytest.raises(ContractViolationException):
            params["missing"]

    def test_copy_is_independent(self, params):
        clone = params.copy()
        clone.set("b", np.full(3, 2.0))
        assert np.all(params["b"].data == 0.0)
        assert not params.allclose(clone)

    def test_ema_params_holds_shadow(self, params):
        params.ema["b"] = np.full(3, 0.5)
        shadow = params.ema_params()
        np.testing.assert_array_equal(shadow["b"].data, np.full(3, 0.5, dtype=np.float32))

    def test_extended_appends_and_rejects_duplicates(self, params):
        bigger = params.extended({"r": Tensor(np.ones(2))})
        assert bigger.names() == ["w", "b", "r"]
        assert "r" not in params
        with pytest.raises(ContractViolationException):
            params.extended({"w": Tensor(np.ones(1))})

    def test_astype(self, params):
        assert params.astype(np.float64)["w"].dtype == np.float64
