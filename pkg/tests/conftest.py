import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_stochastic(rng, D, zeros=0.0):
    """Random row-stochastic matrix; ``zeros`` is the chance an entry is forced to 0."""
    P = rng.random((D, D)) + 1e-3
    if zeros:
        P[rng.random((D, D)) < zeros] = 0.0
        P[np.arange(D), np.arange(D)] += 1e-3
    return P / P.sum(axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion(request):
    """Record a one-line acceptance verdict: ``criterion(n, ok, detail)``.

    The verdict is asserted and also listed in the terminal summary.
    """
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.node.user_properties.append(("acceptance", line))
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when == "call":
                lines += [v for k, v in rep.user_properties if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
