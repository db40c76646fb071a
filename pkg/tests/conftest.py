"""Shared fixtures: small seeded datasets and networks, IDX and config files on disk."""
import struct

import numpy as np
import pytest

# Necessary to ensure the matplotlib testing succeeds even without Xwindows backend
import matplotlib
matplotlib.use('Agg')

import supportnetworks


@pytest.fixture(autouse=True)
def mock_matplotlib(monkeypatch):
    """Patch matplotlib to avoid stalling the tests."""
    def show():
        print("Mock plot used")
    monkeypatch.setattr("matplotlib.pyplot.show", show)


@pytest.fixture
def exact_dataset():
    """d=6 synthetic data on which the relevant/irrelevant split holds exactly (r=2, one unspanned column)."""
    return supportnetworks.datagen.generateSynthetic(6, 2, 40, eps=0.01, seed=3, exact=True, unspanned=1)


@pytest.fixture
def diagonal_dataset():
    """d=3 diagonal task with one relevant component."""
    return supportnetworks.datagen.generateDiagonalTask(3, 1, 20, eps=0.5, seed=1)


@pytest.fixture
def dense_network():
    """A 6 -> 4 -> 4 -> 1 linear network."""
    spec = supportnetworks.network.NetworkSpec([6, 4, 4, 1])
    return supportnetworks.network.initialiseNetwork(spec, "kaiming-normal", seed=5)


@pytest.fixture
def diagonal_network():
    """A depth-3 diagonal linear network on 3 coordinates."""
    spec = supportnetworks.network.NetworkSpec([3, 3, 3, 3], topology="diagonal")
    return supportnetworks.network.initialiseNetwork(spec, "iid-normal", seed=2, scale=0.8)


@pytest.fixture
def write_idx(tmp_path):
    """
    Factory writing an IDX image/label pair, returning the two paths.

    images is a count x rows x cols uint8 array, labels a length-count array.
    """
    def write(images, labels, imageMagic=0x00000803, labelMagic=0x00000801, truncate=0):
        images = np.asarray(images, dtype=np.uint8)
        labels = np.asarray(labels, dtype=np.uint8)
        count, rows, cols = images.shape
        imageBytes = struct.pack(">IIII", imageMagic, count, rows, cols) + images.tobytes()
        labelBytes = struct.pack(">II", labelMagic, len(labels)) + labels.tobytes()
        if truncate:
            imageBytes = imageBytes[:-truncate]
        imagePath = tmp_path / "images.idx"
        labelPath = tmp_path / "labels.idx"
        imagePath.write_bytes(imageBytes)
        labelPath.write_bytes(labelBytes)
        return str(imagePath), str(labelPath)
    return write


@pytest.fixture
def write_config(tmp_path):
    """Factory writing a config file from text, returning its path."""
    def write(text, name="experiment.ini"):
        path = tmp_path / name
        path.write_text(text)
        return str(path)
    return write
