import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[int, list[str]] = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    failed = call.excinfo is not None
    _criteria.setdefault(mark.args[0], []).append("FAIL" if failed else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_criteria):
        outcomes = _criteria[k]
        verdict = "PASS" if all(o == "PASS" for o in outcomes) else "FAIL"
        passed = outcomes.count("PASS")
        terminalreporter.write_line(f"criterion {k}: {verdict} ({passed}/{len(outcomes)} checks)")
