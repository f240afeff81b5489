import numpy as np
import pytest
import torch
from torch.utils.data import TensorDataset


def make_synthetic_dataset(n, num_classes=10, size=32, seed=0, noise=0.3):
    """Easily learnable classification set: class-coded bright stripes."""
    gen = torch.Generator().manual_seed(seed)
    images = torch.randn(n, 3, size, size, generator=gen) * noise
    labels = torch.arange(n) % num_classes
    for i in range(n):
        k = int(labels[i])
        row = (k * size) // num_classes
        images[i, k % 3, row : row + max(size // num_classes, 2), :] += 2.5
    return TensorDataset(images, labels)


@pytest.fixture
def synthetic_dataset():
    return make_synthetic_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
