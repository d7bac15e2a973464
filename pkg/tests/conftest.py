import os
from pathlib import Path

import pytest

from sotmram import data

DATA_CANDIDATES = [os.environ.get("SOTMRAM_DATA_DIR"), "/root/data/mnist"]


def mnist_dir():
    for candidate in DATA_CANDIDATES:
        if candidate and (Path(candidate) / data.FILES["test_labels"]).exists() or \
                candidate and (Path(candidate) / (data.FILES["test_labels"] + ".gz")).exists():
            return Path(candidate)
    return None


@pytest.fixture(scope="session")
def mnist_path():
    path = mnist_dir()
    if path is None:
        pytest.skip("MNIST IDX files not found; set SOTMRAM_DATA_DIR")
    return path


@pytest.fixture(scope="session")
def mnist(mnist_path):
    return data.load_mnist(mnist_path)
