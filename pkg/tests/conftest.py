def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS, format_result
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for row in sorted(RESULTS):
        terminalreporter.write_line(format_result(*row))
