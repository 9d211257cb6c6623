import sys
from collections import defaultdict
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_VERDICTS = defaultdict(list)


@pytest.fixture
def verdict():
    """Record one acceptance check; the summary folds checks into one line per criterion."""
    def record(number, name, ok, detail=""):
        print(f"criterion {number:>2} [{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        _VERDICTS[number].append((bool(ok), name, detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_VERDICTS):
        checks = _VERDICTS[k]
        ok = all(c[0] for c in checks)
        parts = "; ".join(f"{'' if c[0] else 'FAIL '}{c[1]}: {c[2]}" for c in checks)
        terminalreporter.write_line(f"criterion {k:>2} [{'PASS' if ok else 'FAIL'}] {parts}")
