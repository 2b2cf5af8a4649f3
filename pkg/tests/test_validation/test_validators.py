import numpy as np
import pytest

from utils.exceptions import ContractViolationException, ValidationException
from utils.validation.validators import (
    SEED_MAX,
    require,
    require_divisible,
    require_same_shape,
    validate_boolean,
    validate_choice,
    validate_float,
    validate_integer,
    validate_list,
    validate_range_pair,
    validate_seed,
)


class TestValidators:
    def test_integer_validation(self):
        assert validate_integer(42) == 42
        assert validate_integer("42") == 42
        assert validate_integer(4, min_value=1, max_value=4) == 4

        with pytest.raises(ValidationException):
            validate_integer("four")
        with pytest.raises(ValidationException):
            validate_integer(2.5)
        with pytest.raises(ValidationException):
            validate_integer(True)
        with pytest.raises(ValidationException, match="steps must be greater than or equal to 1"):
            validate_integer(0, min_value=1, field_name="steps")
        with pytest.raises(ValidationException):
            validate_integer(101, max_value=100)

    def test_float_validation(self):
        assert validate_float("1e-4") == 1e-4
        assert validate_float(3, min_value=0.0) == 3.0

        with pytest.raises(ValidationException):
            validate_float("nan")
        with pytest.raises(ValidationException):
            validate_float(float("inf"))
        with pytest.raises(ValidationException):
            validate_float(-0.1, min_value=0.0)
        with pytest.raises(ValidationException):
            validate_float(False)

    @pytest.mark.parametrize("raw,expected", [("true", True), ("OFF", False), ("1", True), (False, False)])
    def test_boolean_validation(self, raw, expected):
        assert validate_boolean(raw) is expected

    def test_boolean_rejects_other_text(self):
        with pytest.raises(ValidationException):
            validate_boolean("maybe")

    def test_choice_validation(self):
        assert validate_choice(" rc ", ("rc", "shortcut")) == "rc"
        with pytest.raises(ValidationException):
            validate_choice("heun", ("euler",), field_name="sampler")

    def test_seed_validation(self):
        assert validate_seed(0) == 0
        assert validate_seed(str(SEED_MAX)) == SEED_MAX
        with pytest.raises(ValidationException):
            validate_seed(-1)
        with pytest.raises(ValidationException):
            validate_seed(SEED_MAX + 1)

    def test_list_validation(self):
        assert validate_list((1, "2"), validate_integer) == [1, 2]
        with pytest.raises(ValidationException):
            validate_list("1,2", validate_integer)
        with pytest.raises(ValidationException):
            validate_list([], validate_integer, min_length=1)
        with pytest.raises(ValidationException):
            validate_list([1, 2, 3], validate_integer, max_length=2)

    def test_range_pair(self):
        assert validate_range_pair(["0.05", "0.25"], validate_float) == (0.05, 0.25)
        assert validate_range_pair((7, 7), validate_integer) == (7, 7)
        with pytest.raises(ValidationException):
            validate_range_pair((0.3, 0.1), validate_float)
        with pytest.raises(ValidationException):
            validate_range_pair((0.1,), validate_float)


class TestPreconditions:
    def test_require(self):
        require(True, "unused")
        with pytest.raises(ContractViolationException) as excinfo:
            require(False, "batch is empty", batch=0)
        assert excinfo.value.details == {"batch": 0}

    def test_validation_is_a_contract_violation(self):
        with pytest.raises(ContractViolationException):
            validate_integer("x")

    def test_same_shape(self):
        require_same_shape(np.zeros((2, 3)), np.ones((2, 3)))
        with pytest.raises(ContractViolationException) as excinfo:
            require_same_shape(np.zeros((2, 3)), np.zeros((3, 2)), "z0 and z1")
        assert excinfo.value.details == {"left": (2, 3), "right": (3, 2)}

    def test_divisible(self):
        require_divisible(64, 4, "image height")
        with pytest.raises(ContractViolationException):
            require_divisible(30, 4, "image width")
        with pytest.raises(ContractViolationException):
            require_divisible(30, 0, "image width")

    def test_failure_details_name_the_field(self):
        with pytest.raises(ValidationException) as excinfo:
            validate_float("fast", field_name="train.lr")
        assert excinfo.value.details == {"field": "train.lr", "value": "'fast'"}
