import numpy as np
import pytest

from fanophase import PhysicalModel

# gamma=0.5, kappa=2, delta_C=2 at 2 urad: q = 0.5 + 0.5i, sigma0 = 0.5
CANONICAL = dict(gamma=0.5, kappa=2.0, kappa_r=1.0, coupling_strength=1.0, delta_c_slope=1.0)

# gamma/Gamma ~ 1e-5 and delta_C/kappa = 0.01 per urad: the regime in which
# the cosine inversion is exact up to the +-1 urad estimate of |R(0, eps)|
SUPERRADIANT = dict(gamma=1.0, kappa=100.0, kappa_r=50.0, coupling_strength=5e6, delta_c_slope=1.0)


@pytest.fixture
def canonical():
    return PhysicalModel(**CANONICAL)


@pytest.fixture
def superradiant():
    return PhysicalModel(**SUPERRADIANT)


@pytest.fixture
def grid():
    return np.linspace(-10.0, 10.0, 401)


_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    if "test_acceptance.py" not in report.nodeid:
        return
    label = dict(report.user_properties).get("criterion")
    if label:
        _ACCEPTANCE[label] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE):
        status = "PASS" if _ACCEPTANCE[label] == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {label}")
