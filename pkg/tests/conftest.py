import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from gm_data import SyntheticConfig, generate  # noqa: E402
from gm_instances import KeypointSet  # noqa: E402
from gm_delaunay import delaunay  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running experiment, enabled with GM_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.getenv("GM_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set GM_RUN_SLOW=1 to run slow tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_set():
    def _make(set_id, points, features, labels=None, edges=None):
        points = np.asarray(points, dtype=float)
        return KeypointSet(set_id, points, features, delaunay(points) if edges is None else edges, labels)

    return _make


@pytest.fixture(scope="session")
def small_dataset():
    return generate(SyntheticConfig(universe_size=6, num_sets=5, feature_dim=4, rng_seed=3))


@pytest.fixture(scope="session")
def clean_dataset():
    return generate(
        SyntheticConfig(
            universe_size=6,
            num_sets=4,
            feature_dim=8,
            coord_noise_sigma=0.0,
            feature_noise_sigma=0.0,
            rng_seed=11,
        )
    )
