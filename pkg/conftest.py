"""Shared pytest fixtures."""

import numpy as np
import pytest

from src.data.dataset_builder import gen_edge_image
from src.imaging.kernels import gaussian_kernel
from src.imaging.operators import DegradationOp, Kernel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def image8(rng):
    return rng.random((8, 8))


@pytest.fixture
def kernel3(rng):
    return Kernel(rng.standard_normal((3, 3)))


@pytest.fixture
def blur_op():
    return DegradationOp.blur(gaussian_kernel(1.0, width=3))


@pytest.fixture
def sr_op():
    return DegradationOp.decimated_blur(gaussian_kernel(0.7, width=3), 2)


@pytest.fixture
def edge16():
    return gen_edge_image(0.3, 0.1, 16)


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    monkeypatch.setenv("BILEVEL_THREADS", "1")
