import math

import numpy as np
import pytest
from hypothesis import settings

from tsspec import from_functions, validate

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def unit_segment():
    return validate([(0.0, math.pi)])


@pytest.fixture
def three_points():
    return validate([(0, 0), (1, 1), (2, 2)])


@pytest.fixture
def cos_potential(unit_segment):
    return from_functions(unit_segment, [np.cos], {})
