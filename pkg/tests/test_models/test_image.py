import numpy as np
import pytest

from models.image import Image
from utils.exceptions import ContractViolationException


class TestImage:
    def test_grayscale_gets_channel_axis(self):
        img = Image(np.zeros((4, 5)))
        assert img.size == (4, 5)
        assert img.channels == 1

    def test_pixels_are_read_only(self):
        img = Image.constant(2, 2, 0.5)
        with pytest.raises(ValueError):
            img.pixels[0, 0, 0] = 1.0
        copy = img.array()
        copy[0, 0, 0] = 1.0
        assert img.pixels[0, 0, 0] == 0.5

    @pytest.mark.parametrize(
        "pixels",
        [
            np.zeros((0, 3, 3)),
            np.zeros((2, 2, 2)),
            np.zeros((2, 2, 3, 1)),
            np.full((2, 2, 3), 1.5),
            np.full((2, 2, 3), -0.1),
            np.full((2, 2, 3), np.nan),
        ],
    )
    def test_invalid_images_rejected(self, pixels):
        with pytest.raises(ContractViolationException):
            Image(pixels)

    def test_rounding_slack_is_clipped(self):
        img = Image(np.full((1, 1, 1), 1.0 + 1e-13))
        assert img.pixels.max() == 1.0

    def test_from_array_clamps_on_request(self):
        img = Image.from_array(np.array([[[-0.5, 0.5, 2.0]]]), clamp=True)
        np.testing.assert_array_equal(img.pixels.ravel(), [0.0, 0.5, 1.0])
