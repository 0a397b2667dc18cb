import numpy as np
import pytest

from crdtmerge import MergeState, Tensor
from crdtmerge.rng import SplitMix64


def pytest_addoption(parser):
    parser.addoption("--full-scale", action="store_true", default=False, help="run the 100-node 512x512 simulation")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--full-scale"):
        return
    skip = pytest.mark.skip(reason="full-scale run; pass --full-scale")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def rand_tensor(rng: np.random.Generator, shape=(4, 4)) -> Tensor:
    return Tensor(shape, rng.standard_normal(int(np.prod(shape))))


def random_state(rng: np.random.Generator, owner: str, pool: list, steps: int = 6) -> MergeState:
    """A state grown by a random mix of adds (from ``pool``) and removes."""
    s = MergeState(owner)
    for _ in range(steps):
        visible = sorted(s.visible_hashes())
        if visible and rng.random() < 0.3:
            s.remove(visible[rng.integers(len(visible))])
        else:
            s.add(pool[rng.integers(len(pool))])
    return s


@pytest.fixture
def np_rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def pool(np_rng):
    return [rand_tensor(np_rng, (2, 2)) for _ in range(8)]


@pytest.fixture
def smx():
    return SplitMix64(42)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
