import numpy as np
import pytest

from deformcal.geometry import Intrinsics
from deformcal.target import TargetSpec


@pytest.fixture
def board() -> TargetSpec:
    return TargetSpec(rows=9, cols=6, spacing=0.08)


@pytest.fixture
def camera() -> Intrinsics:
    return Intrinsics(1250.0, 1245.0, 640.3, 479.1, -0.28, 0.12, -0.02)


@pytest.fixture
def pinhole() -> Intrinsics:
    return Intrinsics(1250.0, 1245.0, 640.3, 479.1)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py::test_" not in nodeid:
                continue
            rows.append((nodeid.split("::")[-1], outcome == "passed"))
    if not rows:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, passed in sorted(set(rows)):
        terminalreporter.write_line(f"{name}: {'PASS' if passed else 'FAIL'}")
