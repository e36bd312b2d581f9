import contextlib

RESULTS = {}


@contextlib.contextmanager
def criterion(number, title):
    """Record PASS/FAIL for an acceptance criterion; ``detail`` collects summary text."""
    detail = []
    try:
        yield detail
    except BaseException:
        _record(number, "FAIL", title, detail)
        raise
    _record(number, "PASS", title, detail)


def _record(number, status, title, detail):
    # parametrized criteria merge into one line; any failing case fails it
    old_status, _, old_detail = RESULTS.get(number, ("PASS", title, []))
    status = "FAIL" if "FAIL" in (status, old_status) else "PASS"
    RESULTS[number] = (status, title, old_detail + detail)
    print(f"criterion {number} {status}: {title} {'; '.join(detail)}")


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        status, title, detail = RESULTS[number]
        line = f"{status} criterion {number}: {title}"
        if detail:
            line += " | " + "; ".join(detail)
        terminalreporter.write_line(line)
