import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from apc_echo.config import parse_document  # noqa: E402
from apc_echo.ensemble import run_ensemble  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fig2_job():
    return parse_document({"version": 1, "preset": "fig2"})


@pytest.fixture(scope="session")
def fig2_run(fig2_job):
    job = fig2_job
    return run_ensemble(job.atom, job.sequence(), job.grid.build(), job.integrator, workers=1)
