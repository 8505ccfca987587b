import re
from collections import OrderedDict

import numpy as np
import pytest

_CRITERION = re.compile(r"test_acceptance\.py::test_c(\d+)_")
_verdicts: "OrderedDict[int, bool]" = OrderedDict()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        n = int(m.group(1))
        _verdicts[n] = _verdicts.get(n, True) and report.outcome == "passed"


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_verdicts):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if _verdicts[n] else 'FAIL'}")
