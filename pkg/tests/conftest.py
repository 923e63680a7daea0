import re

CRITERIA = {
    1: "reduction identity (gamma=1 equals the log-likelihood)",
    2: "gradient correctness against finite differences",
    3: "harmonic vs arithmetic mean recovery",
    4: "low-rate calibration direction",
    5: "frailty ratio of fitted rates",
    6: "time-rescaling KS goodness of fit",
    7: "effective sample size diagnostics",
    8: "pipeline determinism",
}

_results = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_", report.nodeid)
    if not m:
        return
    if report.when == "call" or report.failed or report.skipped:
        entry = _results.setdefault(int(m.group(1)), {"outcomes": [], "details": []})
        entry["outcomes"].append(report.outcome)
        entry["details"] += [v for k, v in report.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        entry = _results.get(n)
        if entry is None:
            status = "NOT RUN"
        else:
            status = "PASS" if all(o == "passed" for o in entry["outcomes"]) else "FAIL"
        line = f"criterion {n}: {status}  {title}"
        if entry and entry["details"]:
            line += "  [" + " | ".join(entry["details"]) + "]"
        terminalreporter.write_line(line)
