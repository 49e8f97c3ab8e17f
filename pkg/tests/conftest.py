import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from msdnet.tensor import precision  # noqa: E402


@pytest.fixture
def fp64():
    with precision("fp64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
