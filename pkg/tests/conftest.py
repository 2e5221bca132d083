import numpy as np
import pytest

from stochbatch.data import make_blobs
from stochbatch.models import build_mlp

_ACCEPTANCE: dict = {}


@pytest.fixture
def criterion(request):
    """Record a named acceptance check; the terminal summary lists them all."""

    def record(name, ok, detail=""):
        _ACCEPTANCE[name] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[0]) if s.split()[0].isdigit() else 99):
        ok, detail = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def blobs():
    return make_blobs(120, 2, 2, 3.0, seed=5)


@pytest.fixture
def mlp_282():
    return build_mlp(2, [8], 2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
