import pytest

# (criterion, verdict, detail) rows filled in by the acceptance tests
ACCEPTANCE: list[tuple[int, str, str]] = []


@pytest.fixture
def record_criterion():
    def record(number: int, ok: bool, detail: str) -> None:
        line = (number, "PASS" if ok else "FAIL", detail)
        ACCEPTANCE.append(line)
        print(f"criterion {number}: {line[1]} ({detail})")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, verdict, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number}: {verdict} ({detail})")
