import random
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import strategies as st

from supermarket.model import Instance, load_instance
from supermarket.sampling import RATE_GRID, WEIGHT_GRID, random_instance

FIXTURES = Path(__file__).parent / "fixtures"

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def two_station():
    return load_instance(FIXTURES / "two_station.json")


@pytest.fixture
def golden3():
    return load_instance(FIXTURES / "golden3.json")


@pytest.fixture
def isolated():
    return load_instance(FIXTURES / "isolated.json")


def isolated_stations(lams, mus, weights=None):
    n = len(lams)
    return Instance.build(n, [{j} for j in range(n)], lams, mus, weights)


@st.composite
def instances(draw, max_stations=6):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_instance(random.Random(seed), max_stations=max_stations)


@st.composite
def structured_instances(draw, max_stations=5):
    """Instances built element by element, so hypothesis can shrink them."""
    n = draw(st.integers(1, max_stations))
    stations = st.integers(0, n - 1)
    nbrs = draw(st.lists(st.frozensets(stations, min_size=1, max_size=3), min_size=1, max_size=n + 2))
    # chain every station into the first neighbourhood so the graph is connected
    nbrs = list(nbrs) + [frozenset({0, j}) for j in range(1, n)]
    rates = st.sampled_from(RATE_GRID)
    return Instance(
        n,
        tuple(nbrs),
        tuple(draw(rates) for _ in nbrs),
        tuple(draw(rates) for _ in range(n)),
        tuple(draw(st.sampled_from(WEIGHT_GRID)) for _ in range(n)),
    )


F = Fraction
