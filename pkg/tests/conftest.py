import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from anisotilt.corr2d import build_autocorr_grid  # noqa: E402
from anisotilt.stats import Cn2Profile, table1_config  # noqa: E402

LEVELS = {1: 0.1e-15, 2: 0.25e-15, 3: 0.5e-15, 4: 1.0e-15, 5: 1.5e-15, 6: 2.0e-15}


@pytest.fixture(scope="session")
def cfg():
    return table1_config()


@pytest.fixture(scope="session")
def level1():
    return Cn2Profile.constant(LEVELS[1])


@pytest.fixture(scope="session")
def grid_l1(cfg, level1):
    """Level-1 lag grid, half extent 200 (enough for M = 100 filters)."""
    return build_autocorr_grid(cfg, level1, 200, threads=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_GRID_CACHE = {}


def _shared_grid():
    """Module-independent cached 1D tabulation for property tests."""
    if not _GRID_CACHE:
        from anisotilt.stats import tabulate_correlations
        _GRID_CACHE["corr"] = tabulate_correlations(table1_config(), Cn2Profile.constant(1e-15), 30.0)
    return _GRID_CACHE
