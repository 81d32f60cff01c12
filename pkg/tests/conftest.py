import os
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from idxtools import write_mnist_style_dir

settings.register_profile(
    "suite", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")


def _mnist_dir_valid(path: str) -> bool:
    names = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
    root = Path(path)
    return all((root / n).exists() or (root / (n + ".gz")).exists() for n in names)


@pytest.fixture(scope="session")
def fixture_data_dir(tmp_path_factory) -> Path:
    """MNIST-shaped synthetic IDX directory: 300/class train, 60/class test."""
    return write_mnist_style_dir(tmp_path_factory.mktemp("idxdata"), 300, 60)


@pytest.fixture(scope="session")
def data_dir(fixture_data_dir) -> Path:
    """Real MNIST when MNIST_DIR points at it, the synthetic stand-in otherwise."""
    env = os.environ.get("MNIST_DIR")
    if env and _mnist_dir_valid(env):
        return Path(env)
    return fixture_data_dir


@pytest.fixture(scope="session")
def real_mnist_dir() -> Path:
    env = os.environ.get("MNIST_DIR")
    if not (env and _mnist_dir_valid(env)):
        pytest.skip("MNIST_DIR not set or incomplete")
    return Path(env)
