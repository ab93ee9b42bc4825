import os

import numpy as np
import pytest

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DATA_DIR = os.environ.get("D2NN_DATA_DIR", os.path.join(REPO_ROOT, "data"))


def data_path(name):
    return os.path.join(DATA_DIR, name)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_field_values(rng, n):
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
