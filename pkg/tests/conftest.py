import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

TITLES = {
    1: "golden convolution",
    2: "gradient suite",
    3: "Welford oracle",
    4: "Boltzmann properties",
    5: "trunk causality",
    6: "ar_vs_ma accuracy",
    7: "ar_vs_ar accuracy",
    8: "ar_vs_ar with 20% label noise",
    9: "FGSM attack and recovery",
    10: "SMOTE counts",
    11: "determinism and persistence",
}

RESULTS: dict[int, list[tuple[bool, str]]] = {}


def verdict_line(n: int) -> str:
    parts = RESULTS[n]
    status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
    return f"criterion {n:2d} {status}  {TITLES[n]}: " + "; ".join(detail for _, detail in parts)


@pytest.fixture
def criterion():
    """Record one measured part of an acceptance criterion, then assert it."""

    def check(n: int, ok: bool, detail: str) -> None:
        RESULTS.setdefault(n, []).append((bool(ok), detail))
        print(verdict_line(n))
        assert ok, detail

    return check


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(verdict_line(n))
    missing = sorted(set(TITLES) - set(RESULTS))
    if missing and len(RESULTS) > 1:
        terminalreporter.write_line(f"not run: {missing}")
