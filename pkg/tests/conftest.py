"""Collects one result line per acceptance criterion and prints them at the end of the run."""
import pytest

_PARTS = {}


class AcceptanceLog:
    def record(self, number, title, passed, detail, part=None):
        """Store a result. Parts of one criterion are merged into a single line."""
        _PARTS.setdefault(number, {})[part] = (title, bool(passed), detail)
        return passed


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _PARTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_PARTS):
        parts = [_PARTS[number][k] for k in sorted(_PARTS[number], key=str)]
        status = "PASS" if all(p[1] for p in parts) else "FAIL"
        body = " | ".join(f"{title}: {detail}" for title, _, detail in parts)
        terminalreporter.write_line(f"C{number:<2d} {status}  {body}")
