import sys


def pytest_terminal_summary(terminalreporter):
    # echo the one-line verdicts collected by the acceptance suite
    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)
