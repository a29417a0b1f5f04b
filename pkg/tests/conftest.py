import collections

import pytest

_TITLES = {
    1: "index-assignment golden tables",
    2: "distortion formula",
    3: "Monte Carlo distortion",
    4: "dithered quantizer statistics",
    5: "entropy-coding sandwich and Gaussian-design gap",
    6: "single-description gap",
    7: "sum-rate model",
    8: "jump-system oracle equivalence",
    9: "stability crossing",
    10: "comparative performance",
    11: "efficiency formulas",
}

_outcomes = collections.defaultdict(list)
_durations = collections.defaultdict(float)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n = mark.args[0]
    if rep.when == "call":
        _outcomes[n].append(rep.passed)
        _durations[n] += rep.duration
    elif rep.failed or rep.skipped:
        _outcomes[n].append(False)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        status = "PASS" if all(_outcomes[n]) else "FAIL"
        passed = sum(_outcomes[n])
        terminalreporter.write_line(
            f"criterion {n:2d} {status}  {_TITLES.get(n, '')}"
            f"  ({passed}/{len(_outcomes[n])} checks, {_durations[n]:.2f} s)"
        )
