import os
import sys

import numpy as np
import pytest

# Make `libs`, `src` and `tests` importable when pytest runs from any directory
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from libs.maic.data_model import IpdMatrix  # noqa: E402
from tests.helpers import SQUARE_ROWS  # noqa: E402


@pytest.fixture
def square_ipd():
    return IpdMatrix.from_rows(SQUARE_ROWS, ["x1", "x2"])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
