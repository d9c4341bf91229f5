import logging
import warnings

import pytest

ACCEPTANCE = []


def record(number, title, passed, detail):
    """Store one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE.append((number, title, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:2d}. {title}: {detail}")


@pytest.fixture(autouse=True)
def _quiet_solver_warnings():
    logging.getLogger("ksjko").setLevel(logging.ERROR)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield
