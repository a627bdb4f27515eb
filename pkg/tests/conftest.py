import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def assert_close(actual, expected, rtol=1e-9, scale=1.0):
    """Relative check with an absolute floor proportional to the data scale.

    Entropies of nearly constant samples are differences of large sums and
    carry rounding noise of order ``eps * scale`` even when the exact value
    is zero, so a pure relative bound would be meaningless there.
    """
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    atol = 64 * np.finfo(float).eps * max(float(scale), 1e-300)
    np.testing.assert_allclose(actual, expected, rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[2:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}: {detail}")
