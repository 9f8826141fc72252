import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Print and remember one PASS/FAIL line, then return the flag for asserting."""
    def emit(number, ok, detail):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {detail}"
        _VERDICTS.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
