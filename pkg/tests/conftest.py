import pytest


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def record(request):
    """Append one PASS/FAIL line to the acceptance summary and return the verdict."""

    def _record(cid: str, ok: bool, text: str) -> bool:
        request.config.acceptance_lines.append(f"{'PASS' if ok else 'FAIL'}  [{cid}] {text}")
        print(request.config.acceptance_lines[-1])
        return ok

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
