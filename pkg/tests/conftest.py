import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rcconformal.data import ObservationTable

settings.register_profile("ci", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("stress", max_examples=3000, deadline=None, suppress_health_check=list(HealthCheck))
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


def toy_table(n=200, p_v=2, p_u=1, seed=0, source_rate=0.7):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, p_v))
    u = rng.normal(size=(n, p_u))
    s = (rng.random(n) < source_rate).astype(int)
    a = (rng.random(n) < 0.5).astype(int)
    y = v.sum(1) + u.sum(1) + rng.normal(size=n)
    return ObservationTable.from_full(v, s, y, a, u)


@pytest.fixture
def table():
    return toy_table()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
