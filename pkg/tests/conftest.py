import acceptance_log


def pytest_terminal_summary(terminalreporter):
    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail, seconds in sorted(acceptance_log.RESULTS):
        terminalreporter.write_line(acceptance_log.line(label, passed, detail, seconds))
    n_pass = sum(r[1] for r in acceptance_log.RESULTS)
    terminalreporter.write_line(f"{n_pass}/{len(acceptance_log.RESULTS)} acceptance checks passed")
