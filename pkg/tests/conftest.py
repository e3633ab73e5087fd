from pathlib import Path

import numpy as np
import pytest

from gmmixreg.core import RegressionData

DATA_DIR = Path(__file__).resolve().parents[1] / "data"
ETHANOL = DATA_DIR / "ethanol.csv"



@pytest.fixture(scope="session")
def ethanol() -> RegressionData:
    table = np.genfromtxt(ETHANOL, delimiter=",", names=True)
    return RegressionData.from_predictors(table["NOx"], table["E"])


@pytest.fixture
def verdict(request):
    """Record a one-line PASS/FAIL verdict for the terminal summary, then assert it."""

    def record(key: str, ok: bool, detail: str) -> None:
        line = f"criterion {key:<3s} [{'PASS' if ok else 'FAIL'}] {detail}"
        request.node.user_properties.append(("acceptance", (key, line)))
        assert ok, line

    return record


def _order(key: str):
    digits = "".join(ch for ch in key if ch.isdigit())
    return int(digits), key


def pytest_terminal_summary(terminalreporter):
    lines = {}
    for reports in terminalreporter.stats.values():
        for rep in reports:
            for name, value in getattr(rep, "user_properties", ()):
                if name == "acceptance":
                    lines[value[0]] = value[1]
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines, key=_order):
            terminalreporter.write_line(lines[key])
