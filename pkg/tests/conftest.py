from pathlib import Path

import pytest

from rarescore import _kernels
from rarescore.data import load_parity_split

REPO_ROOT = Path(__file__).resolve().parent.parent
MNIST_DIR = REPO_ROOT / "data" / "mnist"


@pytest.fixture(scope="session")
def mnist_dir() -> Path:
    if not MNIST_DIR.is_dir():
        pytest.fail(
            f"MNIST data directory missing: {MNIST_DIR} (the four standard IDX "
            "files, optionally gzipped, are required)"
        )
    return MNIST_DIR


@pytest.fixture(scope="session")
def parity_train(mnist_dir):
    return load_parity_split(mnist_dir, "train")


@pytest.fixture(scope="session")
def parity_test(mnist_dir):
    return load_parity_split(mnist_dir, "test")


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # JIT compile outside any timed section
    _kernels.warmup()
