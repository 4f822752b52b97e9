import numpy as np
import pytest

from relcontrast.graph import build_graph
from relcontrast.synth import SynthConfig, generate


@pytest.fixture(scope="session")
def synth():
    return generate(SynthConfig())


@pytest.fixture(scope="session")
def small_synth():
    return generate(SynthConfig(rng_seed=3, n_users=30, n_items=20, n_events=150))


@pytest.fixture(scope="session")
def graph(synth):
    return build_graph(synth.db)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance summary ---------------------------------------------------

_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::test_criterion_")[1]
    if report.failed or report.when == "call" or report.skipped:
        _ACCEPTANCE.setdefault(name, "PASS" if report.passed else report.outcome.upper())
        if report.failed:
            _ACCEPTANCE[name] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda s: int(s.split("_")[0])):
        num, _, label = name.partition("_")
        terminalreporter.write_line(f"criterion {num} ({label.replace('_', ' ')}): {_ACCEPTANCE[name]}")
