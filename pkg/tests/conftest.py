import numpy as np
import pytest

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def acceptance_log(request):
    """Record one PASS/FAIL line; lines are echoed now and again in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def log(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)

    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
