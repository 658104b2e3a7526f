import time
from contextlib import contextmanager

import pytest

_RESULTS = {}


@pytest.fixture
def criterion():
    """Context manager recording pass/fail and wall time of one acceptance criterion."""

    @contextmanager
    def check(number, text):
        t0 = time.perf_counter()
        try:
            yield
        except BaseException:
            _RESULTS[number] = ("FAIL", text, time.perf_counter() - t0)
            raise
        _RESULTS[number] = ("PASS", text, time.perf_counter() - t0)

    return check


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        status, text, dt = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {text}  ({dt:.1f} s)")
