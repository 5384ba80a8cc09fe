import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

REPO = Path(__file__).resolve().parents[1]


def data_dir() -> Path:
    return Path(os.environ.get("SLANG_DATA_DIR", REPO / "data"))


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_lowrank(rng, dim, rank, diag_range=(0.5, 2.0)):
    from slang.linalg import LowRankDiagMatrix

    return LowRankDiagMatrix(rng.standard_normal((dim, rank)), rng.uniform(*diag_range, dim))


ACCEPTANCE_LINES: list = []


def report_criterion(number, passed, detail):
    """Record one acceptance line; all lines are repeated in the terminal summary."""
    line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
