import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# Lines recorded by the acceptance tests, echoed after the run.
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
