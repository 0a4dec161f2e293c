import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance verdict line; echoed again in the terminal summary."""

    def _report(number, name, passed, detail, seconds, budget):
        ok = passed and (budget is None or seconds < budget)
        limit = "no time budget" if budget is None else f"budget {budget:g} s"
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number} {name}: {detail}; {seconds:.1f} s ({limit})"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
