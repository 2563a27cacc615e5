import numpy as np
import pytest

from seva.core_math import ClassifierHead, DiagCovariance


@pytest.fixture
def h3():
    """Three-class head over a 2-d feature space used throughout."""
    return ClassifierHead(
        np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]),
        np.zeros(3),
    )


@pytest.fixture
def sigma_half():
    return DiagCovariance(np.array([0.5, 0.5]))


def random_head(rng, C=None, d=None, c_max=10, d_max=16):
    C = C or int(rng.integers(2, c_max + 1))
    d = d or int(rng.integers(2, d_max + 1))
    return ClassifierHead(rng.standard_normal((C, d)), rng.standard_normal(C))


def random_sigma(rng, d, scale=1.5):
    return DiagCovariance(scale * rng.uniform(0.0, 1.0, d))
