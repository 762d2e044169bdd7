from pathlib import Path

import pytest

from reviewsent.corpus import RecordSet, ReviewRecord

FIXTURES = Path(__file__).resolve().parent.parent / "src" / "reviewsent" / "data" / "fixtures"


def make_rs(*rows, source="t"):
    """``rows`` are ``(text, rating)`` pairs; ids are r0, r1, ..."""
    return RecordSet(tuple(ReviewRecord(f"r{i}", t, r, source) for i, (t, r) in enumerate(rows)))


@pytest.fixture
def raw50() -> Path:
    return FIXTURES / "raw50.jsonl"


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
