from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from ftdrf.dataset import Dataset, load_idx

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def mnist_dir() -> Path | None:
    candidates = [os.environ.get("FTDRF_MNIST_DIR"),
                  Path(__file__).resolve().parents[1] / "data" / "mnist",
                  Path.home() / "data" / "mnist"]
    for c in candidates:
        if c and all((Path(c) / f).is_file() for pair in MNIST_FILES.values() for f in pair):
            return Path(c)
    return None


def mnist_paths(split: str) -> tuple[Path, Path]:
    root = mnist_dir()
    if root is None:
        pytest.skip("MNIST IDX files not found; set FTDRF_MNIST_DIR")
    images, labels = MNIST_FILES[split]
    return root / images, root / labels


@pytest.fixture(scope="session")
def mnist_train() -> Dataset:
    return load_idx(*mnist_paths("train"))


@pytest.fixture(scope="session")
def mnist_test() -> Dataset:
    return load_idx(*mnist_paths("test"))


def blobs(n=120, d=4, k=3, seed=0, spread=1.0) -> Dataset:
    """Gaussian blobs with well separated class means."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % k
    centers = rng.normal(scale=4.0, size=(k, d))
    X = centers[y] + rng.normal(scale=spread, size=(n, d))
    return Dataset(X, y, k)


def toy_images(n=40, shape=(8, 8), k=2, seed=0) -> Dataset:
    """Images whose class decides which half is bright."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % k
    imgs = rng.random((n, *shape)) * 0.3
    half = shape[1] // 2
    for i, lab in enumerate(y):
        if lab == 0:
            imgs[i, :, :half] += 0.7
        else:
            imgs[i, :, half:] += 0.7
    return Dataset(imgs.reshape(n, -1), y, k, image_shape=shape)


@pytest.fixture
def blob_data() -> Dataset:
    return blobs()


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one result line per acceptance criterion; echoed in the terminal summary."""
    results = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(number, status: str, text: str) -> str:
        line = f"criterion {number}: {status} - {text}"
        results[str(number)] = line
        print(line)
        return line

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
