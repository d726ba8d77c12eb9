import time

import numpy as np
import pytest

from fracperim.kernel import make_context
from fracperim.quadrature import QuadratureConfig

_ACCEPTANCE: dict = {}
_SESSION_START = time.perf_counter()


class AcceptanceRecorder:
    """Collects one pass/fail line per acceptance criterion."""

    def __call__(self, number: int, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
        return bool(passed)


@pytest.fixture(scope="session")
def record():
    return AcceptanceRecorder()


@pytest.fixture
def ctx2():
    return make_context(2, 0.5)


@pytest.fixture
def cfg():
    return QuadratureConfig(tol=1e-4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        tr.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    tr.write_line(f"session wall time: {time.perf_counter() - _SESSION_START:.0f} s")
