import contextlib

import pytest

_criterion_results = []


@pytest.fixture
def criterion():
    """Context manager recording a one-line verdict per end-to-end check;
    the lines are emitted in the terminal summary, past output capture."""

    @contextlib.contextmanager
    def ctx(num, desc):
        try:
            yield
        except pytest.skip.Exception as exc:
            _criterion_results.append(f"criterion {num:2d} SKIP: {desc} ({exc})")
            raise
        except BaseException:
            _criterion_results.append(f"criterion {num:2d} FAIL: {desc}")
            raise
        else:
            _criterion_results.append(f"criterion {num:2d} PASS: {desc}")

    return ctx


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _criterion_results:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in sorted(_criterion_results):
            terminalreporter.write_line(line)
