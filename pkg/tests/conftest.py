import os

import numpy as np
import pytest

from dhs_rl import config as configuration
from dhs_rl.augment import build_augmented
from dhs_rl.network import discretize

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DESK_CONFIG = os.path.join(ROOT, "configs", "desk_3hx.json")
INDUSTRIAL_CONFIG = os.path.join(ROOT, "configs", "industrial_11hx.json")


class LinearHandle:
    """Exact augmented-system simulator exposing the learner's handle protocol."""

    def __init__(self, aug, eps0, w=0.0):
        self.aug = aug
        self.eps = np.asarray(eps0, dtype=float)
        self.w = w
        self.k = 0

    def state(self):
        return self.eps.copy()

    def advance(self, du, gain_id=None):
        self.eps = self.aug.step(self.eps, np.asarray(du, dtype=float), self.w)
        self.k += 1
        return self.state()


@pytest.fixture(scope="session")
def desk_config():
    return configuration.load(DESK_CONFIG)


@pytest.fixture(scope="session")
def desk_aug(desk_config):
    c = desk_config
    return build_augmented(discretize(c.topology, c.tau), c.F, c.G, c.Q_e, c.R_e)


@pytest.fixture
def linear_handle():
    return LinearHandle


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record and print a one-line verdict for an acceptance criterion."""

    def report(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
