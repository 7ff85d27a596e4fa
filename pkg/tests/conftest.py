import numpy as np
import pytest

from hamst.model import ParamVector
from hamst.simulate import SimConfig, simulate_hamiltonian


def random_params(g, **fixed):
    vals = dict(
        alpha=g.uniform(-0.8, 0.8),
        beta=g.uniform(-0.8, 0.8),
        sigma2=g.uniform(0.5, 2.0),
        sigma2_theta=g.uniform(0.5, 2.0),
        sigma2_p=g.uniform(0.5, 2.0),
        eta1=g.uniform(0.5, 2.0),
        eta2=g.uniform(0.5, 2.0),
        eta3=g.uniform(0.3, 1.5),
    )
    vals.update(fixed)
    return ParamVector(**vals)


def small_dataset(n=3, T=3, seed=0, **fixed):
    g = np.random.default_rng(seed)
    p = random_params(g, **fixed)
    return simulate_hamiltonian(SimConfig(n, T, p, seed=seed)), p


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance report
# Tests marked ``criterion(k)`` attach a one-line detail via ``report_line``;
# the terminal summary prints one PASS/FAIL line per criterion.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number")


@pytest.fixture
def report_line(request):
    def record(text):
        request.node.user_properties.append(("detail", text))
        print(text)

    return record


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None or report.when == "teardown":
        return
    if report.when == "call" or report.failed:
        details = [v for k, v in report.user_properties if k == "detail"]
        _CRITERIA[crit] = (report.passed and report.when == "call", details)


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", m.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        ok, details = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}")
        for d in details:
            for line in str(d).splitlines():
                terminalreporter.write_line(f"    {line}")
