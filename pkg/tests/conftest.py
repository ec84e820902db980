import os
from pathlib import Path

import pytest
from hypothesis import settings

settings.register_profile("voradv", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("voradv")

FOURCLASS_ENV = "VORADV_FOURCLASS"

# filled by test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES: dict = {}


def fourclass_path() -> Path | None:
    """Location of the LIBSVM ``fourclass`` file, from the environment or tests/data."""
    raw = os.environ.get(FOURCLASS_ENV)
    candidates = [Path(raw)] if raw else []
    candidates.append(Path(__file__).parent / "data" / "fourclass")
    for path in candidates:
        if path.is_file():
            return path
    return None


def load_fourclass():
    """Load fourclass or fail the calling test with a pointer to the variable."""
    path = fourclass_path()
    if path is None:
        pytest.fail(f"fourclass dataset not found; set {FOURCLASS_ENV} to the LIBSVM file")
    from voradv.data import load_libsvm
    return load_libsvm(path)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
