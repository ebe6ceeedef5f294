import numpy as np
import pytest

from met3r.core import ImageFrame


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def gray_frame():
    return ImageFrame(np.full((32, 32, 3), 0.5))
