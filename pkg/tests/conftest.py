import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ibpg.config import preset  # noqa: E402
from ibpg.experiments import run_experiment  # noqa: E402


@pytest.fixture(scope="session")
def desk_l1_result():
    return run_experiment(preset("desk-l1"))


@pytest.fixture(scope="session")
def desk_group_result():
    return run_experiment(preset("desk-group"))


@pytest.fixture(scope="session")
def desk_tv_result():
    return run_experiment(preset("desk-tv"))


@pytest.fixture(autouse=True)
def _isolated_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("IBPG_OUTPUT_ROOT", str(tmp_path / "runs"))


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``record(number, title, passed, detail)`` stores one verdict line per acceptance criterion."""

    def record(number, title, passed, detail=""):
        _ACCEPTANCE[number] = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
