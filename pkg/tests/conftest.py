import numpy as np
import pytest

from svdq import _backend


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(params=_backend.available())
def backend(request):
    """Run a test once per available kernel backend, restoring the default after."""
    saved = _backend.name
    _backend.use(request.param)
    yield request.param
    _backend.use(saved)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion and echo it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(number, title, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  [{number:>2}] {title}: {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
