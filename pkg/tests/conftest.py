import numpy as np
import pytest

from cbbre.environment import EnvPath


@pytest.fixture
def flat_path():
    """Zero environment on [0,1], K-flavored."""
    return EnvPath(np.linspace(0.0, 1.0, 11), np.zeros(11), "K", 1.0, -0.5)


def make_flat(T=1.0, n=10, flavor="K"):
    return EnvPath(np.linspace(0.0, T, n + 1), np.zeros(n + 1), flavor, 1.0, -0.5)


def three_se(a, b, se):
    """|a-b| within 3 standard errors (inclusive)."""
    return abs(a - b) <= 3.0 * se
