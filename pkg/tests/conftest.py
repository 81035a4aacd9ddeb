import pytest

_VERDICTS = []


class Verdict:
    """Collects one pass/fail line per acceptance criterion."""

    def __call__(self, label: str, ok: bool, detail: str) -> bool:
        _VERDICTS.append(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
        return ok


@pytest.fixture(scope="session")
def verdict():
    return Verdict()


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
