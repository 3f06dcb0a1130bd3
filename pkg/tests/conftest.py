import os
import sys

import numpy as np
import pytest

from nscbf.scenarios import load_scenario

sys.path.insert(0, os.path.dirname(__file__))
import support  # noqa: E402
from support import random_components, random_tree  # noqa: E402


@pytest.fixture(scope="session")
def ex1():
    return load_scenario("example1-corner")


@pytest.fixture(scope="session")
def multiagent():
    return load_scenario("multiagent-reconfig")


@pytest.fixture(scope="session")
def disks():
    return load_scenario("disk-union")


@pytest.fixture(scope="session")
def three_scenarios(ex1, multiagent, disks):
    return [ex1, multiagent, disks]


@pytest.fixture
def tree_corpus():
    """Factory for seeded random (components, tree) pairs."""
    def make(seed, max_components=8, depth=4):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, max_components + 1))
        comps = random_components(rng, k)
        expr = random_tree(rng, list(comps), depth)
        return comps, expr
    return make


def pytest_terminal_summary(terminalreporter):
    if support.ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(support.ACCEPTANCE):
            terminalreporter.write_line(line)
