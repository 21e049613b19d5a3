import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import hubbard  # noqa: E402


@pytest.fixture
def dimer():
    return hubbard(2)


@pytest.fixture
def hub4():
    return hubbard(4)


@pytest.fixture
def hub6():
    return hubbard(6)


@pytest.fixture
def hub8():
    return hubbard(8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
