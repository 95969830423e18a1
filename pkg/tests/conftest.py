import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    1: "DMoL normalization",
    2: "gradient oracle",
    3: "autoregressive causality",
    4: "architecture fidelity",
    5: "loss weighting",
    6: "desk-scale overfit",
    7: "semantic-guidance effect",
    8: "fusion-mode effect",
    9: "diversity protocol",
    10: "metric oracles",
    11: "determinism and persistence",
}

_results: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture
def report():
    """``report(n, passed, detail)`` records one check toward acceptance criterion ``n``."""
    def record(number: int, passed: bool, detail: str = ""):
        _results.setdefault(number, []).append((bool(passed), detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number, name in CRITERIA.items():
        checks = _results.get(number)
        if not checks:
            terminalreporter.write_line(f"criterion {number:2d} {name:<28} NOT RUN")
            continue
        ok = all(p for p, _ in checks)
        details = "; ".join(d for _, d in checks if d)
        terminalreporter.write_line(f"criterion {number:2d} {name:<28} {'PASS' if ok else 'FAIL'}  {details}")
