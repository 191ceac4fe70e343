import numpy as np
import pytest

from cutstokes.geometry import circle_levelset
from cutstokes.mesh import build_structured_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def unit_mesh4():
    return build_structured_mesh((0.0, 1.0, 0.0, 1.0), 4)


@pytest.fixture
def cut_circle():
    return circle_levelset(0.33, (0.52, 0.47))
