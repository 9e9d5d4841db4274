import sys


def pytest_terminal_summary(terminalreporter):
    """Print one verdict line per acceptance criterion after the run."""
    module = next((m for name, m in sys.modules.items()
                   if name.endswith("test_acceptance")), None)
    verdicts = getattr(module, "VERDICTS", [])
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for line in verdicts:
            terminalreporter.write_line(line)
