import sys

import numpy as np
import pytest

from groupfts.data_model import AgeGrid, hierarchy, synthesize_aggregates


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def two_area_structure():
    """One region holding areas A1 and A2, each split by sex."""
    return hierarchy({"R1": ("A1", "A2")})


def random_panel(structure, rng, n_years=3, ages=None, scale=1e4):
    ages = ages or AgeGrid.default()
    nb = len(structure.bottom_keys)
    E = rng.uniform(0.5, 1.5, size=(n_years, len(ages), nb)) * scale
    m = np.exp(rng.uniform(-9, -2, size=E.shape))
    D = np.round(m * E)
    return synthesize_aggregates(structure, np.arange(2000, 2000 + n_years), ages, D, E)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
