import sys

import numpy as np
import pytest

from brlab.rng import TAG_TEST, RngStream


@pytest.fixture
def gen():
    """Test-only generator, independent of every library stream."""
    return RngStream(20240601, (TAG_TEST,)).generator()


def random_complex(gen, shape):
    return gen.standard_normal(shape) + 1j * gen.standard_normal(shape)


def random_hermitian(gen, W, size=None):
    shape = (W, W) if size is None else (size, W, W)
    M = random_complex(gen, shape)
    return 0.5 * (M + np.conj(np.swapaxes(M, -1, -2)))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
