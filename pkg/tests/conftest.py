import re
from collections import defaultdict

_CRITERION = re.compile(r"test_c(\d+)_")
_outcomes: dict[int, list[bool]] = defaultdict(list)
_details: dict[int, list[str]] = defaultdict(list)


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m or "test_acceptance" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        k = int(m.group(1))
        _outcomes[k].append(report.outcome == "passed")
        _details[k] += [str(v) for name, v in report.user_properties if name == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(_outcomes):
        ok = all(_outcomes[k])
        tr.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}")
        for line in _details[k]:
            tr.write_line(f"    {line}")
