from __future__ import annotations

import shutil
from pathlib import Path

import pytest

from itelos import fixture_path

# filled by test_acceptance.py, echoed at the end of every run
CRITERIA_RESULTS: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def covid_dir() -> Path:
    return fixture_path()


@pytest.fixture
def covid_copy(tmp_path) -> Path:
    """A writable copy of the fixture corpus."""
    dest = tmp_path / "covid"
    shutil.copytree(fixture_path(), dest)
    return dest


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA_RESULTS):
        title, ok, detail = CRITERIA_RESULTS[n]
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}: {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
