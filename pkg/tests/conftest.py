import math

import numpy as np
import pytest

from calderon.conductivity import builtin_field
from calderon.geometry import DomainGeometry, build_chart, select_xi
from calderon.probes import ProbeSpec

# criterion number -> list of (label, passed, detail); filled by test_acceptance
ACCEPTANCE_RESULTS: dict = {}


def record_acceptance(number: int, label: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS.setdefault(number, []).append((label, bool(passed), detail))
    print(f"ACCEPTANCE {number} [{label}]: {'PASS' if passed else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        for label, passed, detail in ACCEPTANCE_RESULTS[number]:
            terminalreporter.write_line(
                f"criterion {number:>2} {label:<28} {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def disk():
    return DomainGeometry.disk()


@pytest.fixture(scope="session")
def bumpy():
    return DomainGeometry.perturbed((0.0, 0.08, 0.05), (0.0, 0.0, 0.04))


@pytest.fixture(scope="session")
def affine_gamma():
    return builtin_field("affine", {"a": 2.0, "b": [1.0, 0.0]})


def make_spec(domain, theta_p=0.0, mode="gamma", theta=0.5, orientation="ccw"):
    chart = build_chart(domain, theta_p)
    return ProbeSpec(chart, select_xi(chart, orientation), theta, mode)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


TWO_PI = 2.0 * math.pi
