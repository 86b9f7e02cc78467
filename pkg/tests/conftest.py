import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from frf.harmonic import harmonic_structure
from frf.structure import BUILTINS, load_definition

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

_HS = {}


def structure_for(name):
    if name not in _HS:
        _HS[name] = harmonic_structure(load_definition(name))
    return _HS[name]


@pytest.fixture(params=BUILTINS)
def builtin(request):
    return request.param


@pytest.fixture
def hs(builtin):
    return structure_for(builtin)


@pytest.fixture
def sg():
    return structure_for("sg")


@pytest.fixture
def interval():
    return structure_for("interval")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# acceptance summary: one line per criterion, whatever the verbosity or capture mode

_ACCEPT = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    key = tuple(mark.args)
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _ACCEPT[key] = _ACCEPT.get(key, True) and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPT:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for (num, title), ok in sorted(_ACCEPT.items()):
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d}. {title}")
