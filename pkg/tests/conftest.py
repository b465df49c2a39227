import numpy as np
import pytest

from biasaudit.metrics import BinaryLabel, LabeledExample, SubgroupPartition

FIX1 = dict(d_neg=[0.1, 0.2, 0.3], d_pos=[0.6, 0.8], dg_neg=[0.65], dg_pos=[0.7, 0.95])


@pytest.fixture
def fix1():
    return SubgroupPartition("g", **FIX1)


@pytest.fixture
def fix1_examples():
    out = []
    for cell, (member, label) in {
        "d_neg": (False, 0),
        "d_pos": (False, 1),
        "dg_neg": (True, 0),
        "dg_pos": (True, 1),
    }.items():
        for i, s in enumerate(FIX1[cell]):
            out.append(
                LabeledExample(f"{cell}-{i}", s, BinaryLabel(label), frozenset({"g"}) if member else frozenset())
            )
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20190513)


# one verdict line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
