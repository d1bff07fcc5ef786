"""Shared fixtures and the `slow` marker."""

import numpy as np
import pytest

from codedwave.acoustics import Medium
from codedwave.txprofiles import ArrayGeometry


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False,
                     help="Run long simulation reproductions")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running simulation reproduction")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def small_array():
    """16-element array at the standard pitch."""
    return ArrayGeometry(n_elements=16, pitch=0.1e-3)


@pytest.fixture
def water():
    return Medium(sound_speed=1450.0, attenuation=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
