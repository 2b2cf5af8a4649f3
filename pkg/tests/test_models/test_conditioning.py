import numpy as np
import pytest

from models.conditioning import CondMode
from models.enums import CondKind
from utils.exceptions import ContractViolationException


@pytest.fixture
def c_str() -> np.ndarray:
    return np.full((4, 4, 12), 2.0)


class TestCondMode:
    def test_full_keeps_both_conditions(self, c_str):
        mode = CondMode.full(c_str, np.ones((4, 8)))
        assert mode.kind is CondKind.FULL
        assert not mode.uses_null_token

    def test_full_requires_semantics(self, c_str):
        with pytest.raises(ContractViolationException):
            CondMode.full(c_str, None)

    def test_partial_scales_structure(self, c_str):
        mode = CondMode.partial(c_str, 0.25)
        assert mode.uses_null_token
        np.testing.assert_allclose(mode.c_str, 0.5)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.3])
    def test_partial_alpha_must_be_interior(self, c_str, alpha):
        with pytest.raises(ContractViolationException):
            CondMode.partial(c_str, alpha)

    def test_unconditional_is_zero(self):
        mode = CondMode.unconditional((4, 4, 12))
        assert mode.alpha == 0.0
        assert not mode.c_str.any()

    def test_no_semantic_keeps_structure(self, c_str):
        mode = CondMode.no_semantic(c_str)
        assert mode.uses_null_token
        np.testing.assert_array_equal(mode.c_str, c_str)
