import sys

import numpy as np
import pytest

from digicensus.synth import SynthConfig, generate, load_city

SMALL_CITY = dict(
    tract_cols=8, tract_rows=8, tract_size=500.0, n_sales=600,
    events_311=6000, events_crime=3000, taxi_trips=3000, n_bumps=12,
)


@pytest.fixture(scope="session")
def small_city():
    return generate(SynthConfig(**SMALL_CITY))


@pytest.fixture(scope="session")
def small_loaded(small_city):
    return load_city(small_city)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
    passed = sum(line.startswith("PASS") for line in results.values())
    terminalreporter.write_line(f"{passed}/{len(results)} criteria passed")
