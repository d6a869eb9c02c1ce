import sys


def pytest_terminal_summary(terminalreporter):
    """Print the one-line acceptance verdicts after the session, outside the
    capture machinery, so they are always visible in the terminal output."""
    for name, module in sys.modules.items():
        if name.endswith("test_acceptance"):
            lines = getattr(module, "ACCEPTANCE_LINES", [])
            if lines:
                terminalreporter.section("acceptance criteria")
                for line in lines:
                    terminalreporter.write_line(line)
            break
