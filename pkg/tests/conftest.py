import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from helpers import make_db, make_hardware, tiny_dense, tiny_moe  # noqa: E402


@pytest.fixture
def hw():
    return make_hardware()


@pytest.fixture
def flat_db(hw):
    return make_db(hw)


@pytest.fixture
def dense_arch():
    return tiny_dense()


@pytest.fixture
def moe_arch():
    return tiny_moe()


@pytest.fixture
def configs_dir():
    return os.path.join(os.path.dirname(__file__), os.pardir, "configs")
