import numpy as np
import pytest

from smcda.data import Dataset, SubsetWindow
from smcda.model import NetSpec, PriorSpec
from smcda.target import TargetContext


def make_ctx(n=40, sizes=(3, 4, 3), activation="tanh", seed=0, window=None, mode="scaled", beta=1.0,
             sigma=1.0):
    rng = np.random.default_rng(seed)
    data = Dataset(rng.normal(size=(n, sizes[0])), rng.integers(0, sizes[-1], n))
    spec = NetSpec(sizes, activation)
    window = window or SubsetWindow(0, n, n)
    return TargetContext(data, window, spec, PriorSpec(sigma), mode=mode, beta=beta)


@pytest.fixture
def small_ctx():
    return make_ctx()


def pytest_terminal_summary(terminalreporter):
    lines = [
        value
        for outcome in ("passed", "failed")
        for rep in terminalreporter.stats.get(outcome, [])
        if rep.when == "call"
        for key, value in rep.user_properties
        if key == "criterion"
    ]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
