"""Shared test fixtures."""
import shutil
import logging

import numpy as np
import pytest

from src.families import build_system
from src.lil_lab import LilConfig
from src.wiener import build_grid


@pytest.fixture(scope="function")
def test_log_dir(tmp_path):
    """Create a temporary directory for log files."""
    log_dir = tmp_path / "test_logs"
    log_dir.mkdir()
    yield log_dir
    # Cleanup
    logging.getLogger("src").handlers.clear()
    shutil.rmtree(log_dir)


@pytest.fixture
def brownian():
    """A_1 = 1, A_0 = 0: the flow from 0 is the driving path itself."""
    return build_system({"preset": "brownian"})


@pytest.fixture
def zero_system():
    return build_system({"preset": "zero"})


@pytest.fixture
def radial():
    return build_system({"preset": "radial"})


@pytest.fixture
def small_grid():
    """c = 2, N = 12, coarse enough for fast unit tests."""
    return build_grid(2.0, 12, 1.0 / 32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def lil_config():
    """Small Brownian harness: windows 5..12, cheap distance searches."""
    def make(**overrides):
        base = dict(
            system={"preset": "brownian"},
            initial={"kind": "point", "point": [0.0]},
            ratio=2.0,
            n_windows=12,
            delta=1.0 / 32,
            m=64,
            seeds=[0, 1],
            dist={"m": 16, "random_starts": 2, "max_iter": 60, "seed": 0},
            subgrid_size=4,
        )
        base.update(overrides)
        return LilConfig(**base)
    return make
