"""
Shared fixtures for the takres test-suite.
"""

import numpy as np
import pytest

from usecase.reservoir_usecase import build_reservoir
from usecase.signals_usecase import MGParams, gen_mackey_glass


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run source-scale reproductions")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def cosine24():
    """Cosine with a 24-sample period."""
    n = np.arange(2400)
    return np.cos(2 * np.pi * n / 24)


@pytest.fixture(scope="session")
def mg_series():
    """Short Mackey-Glass series on the attractor (dt = 1)."""
    return gen_mackey_glass(MGParams(transient=300), 2000, "random", seed=7)


@pytest.fixture
def small_reservoir():
    return build_reservoir(30, mu=0.9, alpha=0.8, b=0.2, seed=3)


@pytest.fixture
def tiny_config_data(tmp_path):
    """Minimal predict configuration that runs in well under a second."""
    return {
        "experiment": "predict",
        "m": 10,
        "train_len": 120,
        "washout": 20,
        "horizon": 5,
        "ensemble_networks": 1,
        "ensemble_sequences": 1,
        "mg": {"transient": 100},
        "out_dir": str(tmp_path / "results"),
        "workers": 1,
    }
