import math

import numpy as np
import pytest

from anosov_lab.metric_models import (
    ConformalPerturbed,
    CustomChart,
    Hyperbolic,
    WarpedProduct,
    sphere_fixture,
)

ACCEPTANCE_LINES = []


@pytest.fixture
def record_criterion():
    """Print and remember one PASS/FAIL line per acceptance criterion."""
    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def hyp1():
    return Hyperbolic(1.0)


@pytest.fixture
def warped_mix():
    return WarpedProduct("cosh_mix", weight=0.25)


@pytest.fixture
def sphere():
    return sphere_fixture()


@pytest.fixture
def flat():
    return CustomChart("euclidean")


def builtin_models():
    """Negatively curved built-in models used across suites."""
    return [
        Hyperbolic(1.0),
        Hyperbolic(2.0),
        ConformalPerturbed(1.0, eps=0.1),
        WarpedProduct("cosh"),
        WarpedProduct("cosh", rate=2.0),
        WarpedProduct("cosh_mix", weight=0.25),
    ]


def sample_points(model, k, seed=0):
    rng = np.random.default_rng(seed)
    if isinstance(model, WarpedProduct):
        return [np.array([rng.uniform(-2, 2), rng.uniform(0, 2 * math.pi)]) for _ in range(k)]
    if isinstance(model, CustomChart) and model.name == "euclidean":
        return [rng.uniform(-3, 3, size=model.dim) for _ in range(k)]
    return [np.array([rng.uniform(-1, 1), rng.uniform(0.3, 3)]) for _ in range(k)]
