import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from oracles import ACCEPTANCE_LINES  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES.items()):
            terminalreporter.write_line(line)
