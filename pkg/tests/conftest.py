import numpy as np
import pytest

from supplyshare.data import Dataset, Method, Observation
from supplyshare.sampler import SamplerConfig
from supplyshare.simulation import desk_truth, simulate

SHORT = SamplerConfig(iterations=1_200, burn_in=200, thin=5, chains=2, seed=11)


@pytest.fixture(scope="session")
def desk_sim():
    return simulate(desk_truth(seed=3))


@pytest.fixture(scope="session")
def desk_data(desk_sim):
    return desk_sim.dataset


@pytest.fixture
def short_cfg():
    return SHORT


@pytest.fixture
def tiny_dataset():
    """Two countries, three regions, two methods, a handful of surveys."""
    rows = [
        ("A", "a1", "pill", 2005, 0.40, 0.05),
        ("A", "a1", "pill", 2012, 0.45, 0.04),
        ("A", "a1", "sterilization", 2012, 0.70, 0.05),
        ("A", "a2", "pill", 2010, 0.35, 0.06),
        ("B", "b1", "sterilization", 2008, 0.80, 0.03),
        ("B", "b1", "pill", 2014, 0.30, 0.05),
    ]
    obs = [Observation(*r) for r in rows]
    return Dataset.from_observations(obs, methods=(Method.STERILIZATION, Method.PILL),
                                     time_window=(2000, 2025))


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record and print the one-line outcome of an acceptance criterion."""
    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
