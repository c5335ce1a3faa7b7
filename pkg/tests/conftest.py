import pytest

_ACCEPTANCE = []


@pytest.fixture
def acceptance_log():
    """Record one verdict line per acceptance criterion; printed in the terminal summary."""

    def record(criterion: int, title: str, passed: bool, detail: str):
        _ACCEPTANCE.append((criterion, f"criterion {criterion} {'PASS' if passed else 'FAIL'}: {title} | {detail}"))
        print(_ACCEPTANCE[-1][1])
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
