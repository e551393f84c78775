"""Shared fixtures: reference geometry and small hand-checkable grids."""

import numpy as np
import pytest
from hypothesis import settings

from otfs_npbl.channel_gen import ScenarioConfig
from otfs_npbl.dd_core import DDGridConfig, ObservationWindow, WindowMode

settings.register_profile("otfs", max_examples=50, deadline=None)
settings.load_profile("otfs")


@pytest.fixture
def reference():
    return ScenarioConfig()


@pytest.fixture
def grid32():
    return DDGridConfig(M=32, N=32, delta_f=15e3)


@pytest.fixture
def window65():
    return ObservationWindow(k_p=16, l_p=16, k_max=6, l_max=4, mode=WindowMode.WINDOWED)


@pytest.fixture
def full_window():
    return ObservationWindow(k_p=16, l_p=16, k_max=6, l_max=4, mode=WindowMode.FULL_FRAME)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def geometric_series(x, n, sign):
    """Reference kernel (1/n) sum_m exp(sign j 2 pi x m / n), summed term by term."""
    x = np.asarray(x, dtype=np.float64)
    acc = np.zeros(x.shape, dtype=np.complex128)
    for m in range(n):
        acc += np.exp(sign * 2j * np.pi * x * m / n)
    return acc / n
