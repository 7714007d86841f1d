import os
from pathlib import Path

import numpy as np
import pytest

from pfvae.data import MnistSet, idx_image_bytes, idx_label_bytes


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_fixture_set(n=32, side=4, seed=0):
    """Synthetic digits: each class lights a different pixel pattern, plus noise."""
    r = np.random.default_rng(seed)
    labels = np.arange(n) % 10
    base = r.uniform(0, 1, size=(10, side * side)) > 0.5
    imgs = np.clip(base[labels] * 0.8 + r.uniform(0, 0.2, size=(n, side * side)), 0, 1)
    return MnistSet(np.round(imgs * 255) / 255, labels)


@pytest.fixture
def tiny_set():
    return make_fixture_set()


@pytest.fixture
def tiny_idx(tmp_path, tiny_set):
    img = tmp_path / "img-idx3-ubyte"
    lbl = tmp_path / "lbl-idx1-ubyte"
    img.write_bytes(idx_image_bytes(np.rint(tiny_set.images * 255), 4, 4))
    lbl.write_bytes(idx_label_bytes(tiny_set.labels))
    return img, lbl


@pytest.fixture(scope="session")
def mnist_files(tmp_path_factory):
    """Real MNIST IDX files: $PFVAE_MNIST_DIR if set, else the mlxtend 5,000-image sample."""
    env = os.environ.get("PFVAE_MNIST_DIR")
    if env:
        d = Path(env)
        return d / "train-images-idx3-ubyte", d / "train-labels-idx1-ubyte"
    from pfvae.data import write_bundled_subset

    return write_bundled_subset(tmp_path_factory.mktemp("mnist"))
