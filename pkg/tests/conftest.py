"""Shared test plumbing: collects acceptance-criterion verdicts and prints
one pass/fail line per criterion at the end of the run."""

CRITERIA = {
    1: "matching and metrics equal brute-force oracles",
    2: "finite-difference gradient checks",
    3: "attention algebra",
    4: "negative examples cut false positives",
    5: "fusion beats the single modalities",
    6: "scene flow beats optical flow on colinear motion",
    7: "attention-pair complexity ordering",
    8: "training smoke on a separable mix",
    9: "hyperparameter defaults",
}

_results = {}


def record_criterion(number, passed, detail):
    _results[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        name = CRITERIA[number]
        if number in _results:
            passed, detail = _results[number]
            status = "PASS" if passed else "FAIL"
            terminalreporter.write_line(f"[criterion {number}] {status} ({name}): {detail}")
        else:
            terminalreporter.write_line(f"[criterion {number}] NOT RUN ({name})")
