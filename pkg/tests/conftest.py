import pytest

CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[CRITERIA] = {}
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criterion (slow)")


@pytest.fixture(scope="session")
def criteria_log(pytestconfig):
    """Dict ``number -> (passed, detail)`` printed in the terminal summary."""
    return pytestconfig.stash[CRITERIA]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(CRITERIA, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(log):
        passed, detail = log[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
